"""Command line surface: simulate, estimate-var, estimate-dfm, benchmark, mc.

Every command writes into an output directory whose manifest.json captures
the seed, the schedule, and a sha256 hash of the effective configuration.
All other files carry that hash on a leading comment line (CSV) or field
(JSON), and rerunning into a directory whose manifest hash differs is
refused.  Timing and environment records are nondeterministic by nature and
live in separate files; everything else is byte-identical under a fixed
seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
import traceback
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from .dfm import DfmPriors, run_gibbs_dfm
from .errors import NumericalError, ValidationError
from .experiments import (_if_summary, fig1_grid, fig2_grid, run_benchmarks,
                          run_mc_study, simulate_dgp, standard_designs)
from .ingest import ingest, format_date_key, next_date_key, var_constraint_inputs
from .patterns import (aggregate_weekly, build_mq_constraints,
                       build_weekly_constraints, MQ_WEIGHTS, ObservationMask)
from .rng import RngStream
from .var_mf import GibbsConfig, minnesota_prior, run_gibbs_var

logger = logging.getLogger(__name__)

# stored post-burn draws / burn-in sweeps per scale
SCHEDULES = {"desk": (3000, 1000), "paper": (15000, 5000)}


@dataclass
class RunConfig:
    """Estimation settings; file keys and flag names match the field names.

    VAR prior fields follow the lag-decay shrinkage construction; dfm_*
    fields are the factor model's zero-centered prior variances.
    """

    model: str = "var"
    p: int = 5
    q: int = 2
    k: int = 8
    kappa1: float = 0.04
    kappa2: float = 0.01
    nu0: float = 0.0          # 0 means the prior builder's n + 3 default
    s0_scale: float = 1.0
    eta0: float = 10.0
    s_h: float = 0.004
    phi0: float = 0.97
    v_phi: float = 0.01
    dfm_va: float = 1.0
    dfm_vpsi: float = 0.01
    dfm_vphi: float = 0.01
    dfm_nu_h: float = 3.0
    dfm_s_h: float = 1.0
    dfm_vh0: float = 0.01
    constraints: str = "hard"
    draws: int = 3000
    burn: int = 1000
    seed: int = 0
    sv: bool = True
    standardize: bool = False

    def validate(self):
        if self.model not in ("var", "dfm"):
            raise ValidationError(f"model must be var or dfm, got {self.model!r}")
        if self.constraints not in ("hard", "soft"):
            raise ValidationError("constraints must be hard or soft")
        for name in ("kappa1", "kappa2", "s0_scale", "eta0", "s_h", "v_phi",
                     "dfm_va", "dfm_vpsi", "dfm_vphi", "dfm_nu_h", "dfm_s_h",
                     "dfm_vh0"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("p", "q", "k", "draws"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.burn < 0:
            raise ValidationError("burn must be nonnegative")
        if self.nu0 < 0:
            raise ValidationError("nu0 must be nonnegative")
        if not -1.0 < self.phi0 < 1.0:
            raise ValidationError("phi0 must lie in (-1, 1)")
        return self


def parse_config(path):
    """Flat key = value file -> RunConfig; unknown keys are errors."""
    cfg = RunConfig()
    kinds = {f.name: f.type for f in fields(RunConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, _, val = s.partition("=")
            key, val = key.strip(), val.strip()
            if key not in kinds:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                if val.lower() not in ("true", "false", "0", "1"):
                    raise ValidationError(f"{path}:{lineno}: {key} must be boolean")
                setattr(cfg, key, val.lower() in ("true", "1"))
            elif isinstance(current, int):
                setattr(cfg, key, int(val))
            elif isinstance(current, float):
                setattr(cfg, key, float(val))
            else:
                setattr(cfg, key, val)
    return cfg


def _apply_flags(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scale", None):
        cfg.draws, cfg.burn = SCHEDULES[args.scale]
    if getattr(args, "draws", None) is not None:
        cfg.draws = args.draws
    if getattr(args, "burn", None) is not None:
        cfg.burn = args.burn
    if getattr(args, "constraints", None):
        cfg.constraints = args.constraints
    if getattr(args, "standardize", False):
        cfg.standardize = True
    return cfg.validate()


def manifest_hash(payload):
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _prepare_outdir(outdir, payload):
    """Create the output directory and enforce the resume contract."""
    os.makedirs(outdir, exist_ok=True)
    digest = manifest_hash(payload)
    existing = os.path.join(outdir, "manifest.json")
    if os.path.exists(existing):
        with open(existing) as fh:
            old = json.load(fh)
        if old.get("manifest_hash") != digest:
            raise ValidationError(
                f"{outdir} holds results for a different configuration "
                f"(manifest hash {old.get('manifest_hash')!r}); refusing to mix")
    record = dict(payload)
    record["manifest_hash"] = digest
    with open(existing, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest


def _write_csv(path, digest, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_hash={digest}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, digest, obj):
    out = dict(obj)
    out["manifest_hash"] = digest
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    return repr(float(v)) if np.isfinite(v) else ""


def _synthetic_dates(T):
    keys = []
    k = (2000, 1)
    for _ in range(T):
        keys.append(format_date_key(k, "monthly"))
        k = next_date_key(k, "monthly")
    return keys


def cmd_simulate(args):
    from .experiments import McDesign

    n_obs, n_mis = args.no, args.nm
    if args.n is not None and args.n != n_obs + n_mis:
        raise ValidationError(f"--n {args.n} contradicts --no {n_obs} + --nm {n_mis}")
    design = McDesign(name="cli", n=n_obs + n_mis, n_obs=n_obs, n_mis=n_mis,
                      T=args.T, p=args.p, seed=args.seed or 0)
    payload = {"command": "simulate", "n_obs": n_obs, "n_mis": n_mis,
               "T": args.T, "p": args.p, "seed": design.seed}
    inst = simulate_dgp(design, RngStream(design.seed, (0,)))
    payload["explosive_redraws"] = inst.n_redraws
    digest = _prepare_outdir(args.out, payload)

    names = [f"v{j + 1:02d}" for j in range(design.n)]
    dates = _synthetic_dates(args.T)
    panel = inst.panel.copy()
    for (t, j), z in inst.quarterly_values.items():
        panel[t - 1, j] = z  # aggregate shows on its release row
    rows = [[dates[t]] + [_fmt(panel[t, j]) for j in range(design.n)]
            for t in range(args.T)]
    _write_csv(os.path.join(args.out, "panel.csv"), digest,
               ["date"] + names, rows)
    rows = [[dates[t]] + [_fmt(inst.truth_panel[t, j]) for j in range(design.n)]
            for t in range(args.T)]
    _write_csv(os.path.join(args.out, "truth.csv"), digest,
               ["date"] + names, rows)
    schema = [[names[j], "quarterly" if j >= n_obs else "monthly", "level"]
              for j in range(design.n)]
    _write_csv(os.path.join(args.out, "schema.csv"), digest,
               ["series", "frequency", "transform"], schema)
    logger.info("wrote %s: panel, truth, schema (%d redraws)",
                args.out, inst.n_redraws)
    return 0


def _missing_summary_rows(dataset, mask, summary):
    cells = np.argwhere(~mask.observed)  # time-major, matches draw order
    rows = []
    for idx, (t, j) in enumerate(cells):
        mean = dataset.destandardize(j, summary["mean"][idx])
        lo = dataset.destandardize(j, summary["q16"][idx])
        hi = dataset.destandardize(j, summary["q84"][idx])
        rows.append([dataset.dates[t], dataset.names[j],
                     repr(float(mean)), repr(float(lo)), repr(float(hi))])
    return rows


def _estimate_payload(cmd, args, cfg, dataset):
    return {"command": cmd, "data": os.path.abspath(args.data),
            "schema": os.path.abspath(args.schema),
            "config": asdict(cfg), "series": list(dataset.names),
            "T": dataset.T, "base": dataset.base}


def cmd_estimate_var(args):
    cfg = parse_config(args.config) if args.config else RunConfig()
    _apply_flags(cfg, args)
    dataset = ingest(args.data, args.schema, standardize=cfg.standardize)
    panel, mq, weekly = var_constraint_inputs(dataset)
    payload = _estimate_payload("estimate-var", args, cfg, dataset)
    digest = _prepare_outdir(args.out, payload)

    mask = ObservationMask(np.isfinite(panel))
    if mq and weekly:
        raise ValidationError("cannot mix monthly and weekly aggregation data")
    cons = None
    if mq:
        cons = build_mq_constraints(mask, mq, kind=cfg.constraints)
    elif weekly:
        cons = build_weekly_constraints(mask, weekly, kind=cfg.constraints)

    prior = minnesota_prior(panel, cfg.p, kappa1=cfg.kappa1, kappa2=cfg.kappa2,
                            eta0=cfg.eta0, sh0=cfg.s_h, phi0=cfg.phi0,
                            vphi=cfg.v_phi)
    prior.S0 = cfg.s0_scale * np.eye(dataset.n)
    if cfg.nu0 > 0:
        prior.nu0 = cfg.nu0
    gibbs = GibbsConfig(n_draws=cfg.draws, n_burn=cfg.burn, seed=cfg.seed,
                        constraints=cfg.constraints, sv=cfg.sv)
    chain = run_gibbs_var(panel, cfg.p, prior, gibbs,
                          rng=RngStream(cfg.seed), constraints=cons)

    summary = chain.summary("missing")
    _write_csv(os.path.join(args.out, "missing_summary.csv"), digest,
               ["date", "series", "mean", "q16", "q84"],
               _missing_summary_rows(dataset, mask, summary))

    # posterior-mean panel on the model scale, for aggregation output
    mean_panel = panel.copy()
    mean_panel[~mask.observed] = summary["mean"]
    agg_rows = []
    for j, freq in enumerate(dataset.frequencies):
        if freq == dataset.base:
            continue
        if dataset.base == "weekly":
            gaps = [nw for (t, jj), (z, nw) in weekly.items() if jj == j]
            if not gaps:
                continue
            n_w = int(np.bincount(gaps).argmax())
            path = aggregate_weekly(mean_panel[:, j], n_w)
            for t in range(1, dataset.T + 1):
                if np.isfinite(path[t]):
                    agg_rows.append([dataset.dates[t - 1], dataset.names[j],
                                     repr(float(path[t]))])
        else:
            col = mean_panel[:, j]
            w = MQ_WEIGHTS[::-1]
            for t in range(5, dataset.T + 1):
                val = float(np.dot(w, col[t - 5:t]))
                agg_rows.append([dataset.dates[t - 1], dataset.names[j],
                                 repr(val)])
    _write_csv(os.path.join(args.out, "aggregates.csv"), digest,
               ["date", "series", "aggregate"], agg_rows)

    blocks = {"missing": chain.draws["missing"],
              "beta": chain.draws["beta"],
              "Sigma": chain.draws["Sigma"].reshape(cfg.draws, -1)}
    if "h" in chain.draws:
        blocks["h"] = chain.draws["h"]
    _write_json(os.path.join(args.out, "if_summary.json"), digest,
                {name: _if_summary(x) for name, x in blocks.items()})
    logger.info("wrote %s: missing_summary, aggregates, if_summary", args.out)
    return 0


def cmd_estimate_dfm(args):
    if args.config:
        cfg = parse_config(args.config)
    else:
        # factor analyses z-score by convention
        cfg = RunConfig(model="dfm", standardize=True)
    cfg.model = "dfm"
    _apply_flags(cfg, args)
    if args.k is not None:
        cfg.k = args.k
        cfg.validate()
    dataset = ingest(args.data, args.schema, standardize=cfg.standardize)
    payload = _estimate_payload("estimate-dfm", args, cfg, dataset)
    digest = _prepare_outdir(args.out, payload)

    panel = dataset.values
    complete = np.flatnonzero(np.isfinite(panel).all(axis=0))
    if complete.size < cfg.k:
        raise ValidationError(
            f"need {cfg.k} fully observed series to anchor the factors, "
            f"have {complete.size}")
    rest = [j for j in range(dataset.n) if j not in set(complete[:cfg.k])]
    order = list(complete[:cfg.k]) + rest

    priors = DfmPriors(va=cfg.dfm_va, vpsi=cfg.dfm_vpsi, vphi=cfg.dfm_vphi,
                       nu_h=cfg.dfm_nu_h, s_h=cfg.dfm_s_h, vh0=cfg.dfm_vh0)
    gibbs = GibbsConfig(n_draws=cfg.draws, n_burn=cfg.burn, seed=cfg.seed)
    dump = os.path.join(args.out, "state_dump.npz")
    chain = run_gibbs_dfm(panel, cfg.k, priors, gibbs,
                          rng=RngStream(cfg.seed), order=order,
                          state_dump=dump)

    fsum = chain.summary("factors")
    rows = []
    for t in range(dataset.T):
        for f in range(cfg.k):
            rows.append([dataset.dates[t], f + 1,
                         repr(float(fsum["mean"][t, f])),
                         repr(float(fsum["q16"][t, f])),
                         repr(float(fsum["q84"][t, f]))])
    _write_csv(os.path.join(args.out, "factors.csv"), digest,
               ["date", "factor", "mean", "q16", "q84"], rows)

    if "missing" in chain.draws:
        reordered = dataset.values[:, order]
        mask = ObservationMask(np.isfinite(reordered))
        view = Reordered(dataset, order)
        _write_csv(os.path.join(args.out, "missing_summary.csv"), digest,
                   ["date", "series", "mean", "q16", "q84"],
                   _missing_summary_rows(view, mask, chain.summary("missing")))

    blocks = {"factors": chain.draws["factors"].reshape(cfg.draws, -1),
              "loadings": chain.draws["loadings"].reshape(cfg.draws, -1),
              "psi": chain.draws["psi"].reshape(cfg.draws, -1),
              "phi": chain.draws["phi"].reshape(cfg.draws, -1)}
    _write_json(os.path.join(args.out, "if_summary.json"), digest,
                {name: _if_summary(x) for name, x in blocks.items()})
    _write_json(os.path.join(args.out, "ordering.json"), digest,
                {"order": [dataset.names[j] for j in order]})
    logger.info("wrote %s: factors, if_summary", args.out)
    return 0


class Reordered:
    """Column-permuted view of a dataset, for summaries in sampler order."""

    def __init__(self, dataset, order):
        self.dates = dataset.dates
        self.names = [dataset.names[j] for j in order]
        self._base = dataset
        self._order = order

    def destandardize(self, j, x):
        return self._base.destandardize(self._order[j], x)


def cmd_benchmark(args):
    grids = {"fig1": fig1_grid, "fig2": fig2_grid}
    designs = []
    for g in args.grid:
        designs.extend(grids[g]())
    backends = ["numba", "numpy"] if args.backends == "both" else None
    budget = 30.0 if args.scale == "desk" else 600.0
    payload = {"command": "benchmark", "grid": list(args.grid),
               "seed": args.seed or 0, "scale": args.scale,
               "backends": args.backends}
    digest = _prepare_outdir(args.out, payload)
    rows = run_benchmarks(designs=designs, seed=args.seed or 0,
                          time_budget=budget, backends=backends)
    _write_csv(os.path.join(args.out, "timings.csv"), digest,
               ["design", "n_obs", "n_mis", "T", "p", "method", "backend",
                "seconds", "timed_out", "error"],
               [[r["design"], r["n_obs"], r["n_mis"], r["T"], r["p"],
                 r["method"], r["backend"],
                 "" if r["seconds"] is None else repr(r["seconds"]),
                 int(r["timed_out"]), r["error"] or ""] for r in rows])
    _write_json(os.path.join(args.out, "environment.json"), digest,
                {"platform": platform.platform(),
                 "python": sys.version.split()[0],
                 "numpy": np.__version__,
                 "backend_default": kernels.current_backend(),
                 "cpus": os.cpu_count(),
                 "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")})
    logger.info("wrote %s: timings for %d cells", args.out, len(rows))
    return 0


def cmd_mc(args):
    designs = standard_designs(args.scale)
    if args.designs:
        wanted = set(args.designs.split(","))
        known = {d.name for d in designs}
        if not wanted <= known:
            raise ValidationError(f"unknown designs {sorted(wanted - known)}; "
                                  f"choose from {sorted(known)}")
        designs = [d for d in designs if d.name in wanted]
    payload = {"command": "mc", "scale": args.scale,
               "designs": [d.name for d in designs],
               "draws": designs[0].n_draws, "burn": designs[0].n_burn,
               "reps": designs[0].n_reps}
    digest = _prepare_outdir(args.out, payload)

    mse_rows, time_rows, results = [], [], {}
    for design in designs:
        res = run_mc_study(design)
        results[design.name] = json.loads(res.to_json())
        for method, vals in res.mse.items():
            for rep, v in enumerate(vals):
                mse_rows.append([design.name, method, rep, repr(float(v))])
            for rep, s in enumerate(res.wall_times[method]):
                time_rows.append([design.name, method, rep, repr(float(s))])
    _write_csv(os.path.join(args.out, "mse.csv"), digest,
               ["design", "method", "rep", "mse"], mse_rows)
    _write_csv(os.path.join(args.out, "wall_times.csv"), digest,
               ["design", "method", "rep", "seconds"], time_rows)
    for name in results:
        results[name].pop("wall_times", None)  # keep results.json deterministic
    _write_json(os.path.join(args.out, "results.json"), digest, results)
    logger.info("wrote %s: mse, wall_times, results", args.out)
    return 0


def _add_common(sp, scale_default=None):
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--draws", type=int, default=None)
    sp.add_argument("--burn", type=int, default=None)
    sp.add_argument("--constraints", choices=("hard", "soft"), default=None)
    sp.add_argument("--scale", choices=("desk", "paper"), default=scale_default)
    sp.add_argument("--out", required=True)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="bandmiss",
        description="Precision-based estimation of large models with missing data")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="write a synthetic mixed-frequency panel")
    sp.add_argument("--n", type=int, default=None,
                    help="total series; defaults to no + nm")
    sp.add_argument("--no", type=int, default=5, dest="no")
    sp.add_argument("--nm", type=int, default=1, dest="nm")
    sp.add_argument("--T", type=int, default=300)
    sp.add_argument("--p", type=int, default=5)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate-var", help="mixed-frequency VAR estimation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--standardize", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_estimate_var)

    sp = sub.add_parser("estimate-dfm", help="factor model estimation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--standardize", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_estimate_dfm)

    sp = sub.add_parser("benchmark", help="time 10 draws across design grids")
    sp.add_argument("--grid", nargs="+", choices=("fig1", "fig2"),
                    default=["fig1"])
    sp.add_argument("--backends", choices=("current", "both"),
                    default="current")
    _add_common(sp, scale_default="desk")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("mc", help="replication study over the standard designs")
    sp.add_argument("--designs", default=None,
                    help="comma-separated subset of the design names")
    _add_common(sp, scale_default="desk")
    sp.set_defaults(func=cmd_mc)
    return ap


def _dump_state(args, exc):
    outdir = getattr(args, "out", ".") or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "state_dump.json")
    with open(path, "w") as fh:
        json.dump({"command": getattr(args, "command", None),
                   "error": str(exc),
                   "type": type(exc).__name__,
                   "traceback": traceback.format_exc()}, fh, indent=2)
        fh.write("\n")
    return path


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        path = _dump_state(args, exc)
        print(f"numerical failure: {exc}\nstate saved to {path}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
