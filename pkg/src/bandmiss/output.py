"""Chain output container shared by the VAR and factor model samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

QUANTS = (0.16, 0.5, 0.84)


@dataclass
class ChainOutput:
    """Stored Gibbs draws plus run metadata.

    draws maps block name -> array with the draw index first.  Summaries are
    pure reductions of the stored draws, so two outputs from identical
    configurations merge by concatenation.
    """

    draws: dict
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def n_draws(self):
        for v in self.draws.values():
            return v.shape[0]
        return 0

    def summary(self, name):
        """Posterior mean and 16/50/84% quantiles of one block, per cell."""
        x = self.draws[name]
        qs = np.quantile(x, QUANTS, axis=0)
        return {
            "mean": x.mean(axis=0),
            "q16": qs[0],
            "q50": qs[1],
            "q84": qs[2],
        }

    @classmethod
    def merge(cls, a: "ChainOutput", b: "ChainOutput") -> "ChainOutput":
        if set(a.draws) != set(b.draws):
            raise ValidationError("cannot merge chains with different stored blocks")
        draws = {k: np.concatenate([a.draws[k], b.draws[k]], axis=0) for k in a.draws}
        meta = dict(a.meta)
        meta["merged"] = True
        diag = dict(a.diagnostics)
        diag.update({f"second_{k}": v for k, v in b.diagnostics.items()})
        return cls(draws, meta, diag)
