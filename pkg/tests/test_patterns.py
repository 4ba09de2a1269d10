import numpy as np
import pytest

from bandmiss.errors import (DimensionMismatch, ValidationError,
                             WindowOutOfRange)
from bandmiss.patterns import (ConstraintSet, MQ_WEIGHTS, ObservationMask,
                               aggregate_weekly, backfill_initials,
                               build_mq_constraints, build_selection,
                               build_var_stacking, build_weekly_constraints,
                               column_fill_values, constraint_level_fill,
                               weekly_weights)
from bandmiss.var_mf import VarParams


def quarterly_mask(T, n, hidden):
    obs = np.ones((T, n), dtype=bool)
    obs[:, hidden] = False
    return ObservationMask(obs)


class TestObservationMask:
    def test_positions_follow_time_major_order(self):
        obs = np.array([[True, False], [False, True], [True, True]])
        m = ObservationMask(obs)
        assert m.n_observed == 4 and m.n_missing == 2
        # missing cells in time-major order: (t=1, i=1) then (t=2, i=0)
        assert m.missing_position(1, 1) == 0
        assert m.missing_position(2, 0) == 1
        assert m.missing_position(1, 0) == -1
        assert m.observed_position(1, 0) == 0
        assert m.observed_position(3, 1) == 3

    def test_rejects_1d(self):
        with pytest.raises(DimensionMismatch):
            ObservationMask(np.ones(4, dtype=bool))


class TestSelection:
    def test_reassembles_panel(self):
        rng = np.random.default_rng(0)
        obs = rng.random((6, 3)) < 0.6
        y = rng.standard_normal(18)
        m = ObservationMask(obs)
        sel = build_selection(m)
        flat = obs.reshape(-1)
        back = sel.S_o.matvec(y[flat]) + sel.S_m.matvec(y[~flat])
        np.testing.assert_allclose(back, y)
        # columns are orthonormal selections
        np.testing.assert_allclose(
            (sel.S_o.transpose().to_scipy() @ sel.S_o.to_scipy()).toarray(),
            np.eye(m.n_observed))


class TestVarStacking:
    def test_matches_recursion(self):
        rng = np.random.default_rng(1)
        n, p, T = 3, 2, 7
        params = VarParams(
            b0=rng.standard_normal(n),
            B=[rng.standard_normal((n, n)) * 0.3 for _ in range(p)],
            Sigma=np.eye(n),
        )
        initials = rng.standard_normal((p, n))
        H, c = build_var_stacking(params, T, initials)
        y = rng.standard_normal(T * n)
        # H y - c must equal the innovation y_t - b0 - sum B_l y_{t-l}
        resid = H.matvec(y) - c
        Y = y.reshape(T, n)
        ext = np.vstack([initials[::-1], Y])
        for t in range(T):
            want = Y[t] - params.b0
            for l in range(1, p + 1):
                want -= params.B[l - 1] @ ext[p + t - l]
            np.testing.assert_allclose(resid[t * n:(t + 1) * n], want,
                                       atol=1e-12)

    def test_unit_diagonal_and_bandwidth(self):
        n, p, T = 2, 3, 6
        params = VarParams(b0=np.zeros(n),
                           B=[np.full((n, n), 0.1)] * p, Sigma=np.eye(n))
        H, _ = build_var_stacking(params, T, np.zeros((p, n)))
        D = H.to_dense()
        np.testing.assert_allclose(np.diag(D), 1.0)
        assert np.all(np.triu(D, 1) == 0.0)
        # lower fill reaches exactly p block diagonals; the farthest scalar
        # offset inside the lag-p block is (p + 1) n - 1
        assert np.any(np.diag(D, -p * n))
        assert not np.any([np.diag(D, -d).any()
                           for d in range((p + 1) * n, T * n)])


class TestMqConstraints:
    def test_window_weights_and_values(self):
        T, n, hid = 12, 3, 2
        mask = quarterly_mask(T, n, hid)
        qv = {(6, hid): 4.2, (9, hid): -1.0}
        cons = build_mq_constraints(mask, qv, kind="hard")
        assert cons.n_rows == 2 and cons.kind == "hard"
        M = cons.M.to_dense()
        mpos = mask.missing_position_matrix()
        # release at t covers t-4..t with palindromic weights
        row = M[0]
        for j, w in enumerate(MQ_WEIGHTS):
            assert row[mpos[6 - 1 - j, hid]] == pytest.approx(w)
        assert cons.z[0] == pytest.approx(4.2)
        assert cons.row_time.tolist() == [6, 9]
        assert cons.row_var.tolist() == [hid, hid]

    def test_palindromic_weights_make_direction_irrelevant(self):
        np.testing.assert_allclose(MQ_WEIGHTS, MQ_WEIGHTS[::-1])
        assert MQ_WEIGHTS.sum() == pytest.approx(3.0)

    def test_early_release_dropped_without_initials(self):
        mask = quarterly_mask(9, 2, 1)
        cons = build_mq_constraints(mask, {(3, 1): 1.0, (6, 1): 2.0},
                                    kind="hard")
        assert cons.n_rows == 1 and cons.n_dropped == 1
        assert cons.row_time.tolist() == [6]

    def test_early_release_kept_with_initials(self):
        mask = quarterly_mask(9, 2, 1)
        init = np.array([[0.0, 10.0], [0.0, 20.0]])  # y_0, y_{-1}
        cons = build_mq_constraints(mask, {(3, 1): 1.0}, initial_values=init,
                                    kind="hard")
        assert cons.n_rows == 1 and cons.n_dropped == 0
        # z adjusts by w_3 y_0 + w_4 y_{-1} = (2/3)*10 + (1/3)*20
        assert cons.z[0] == pytest.approx(1.0 - (2 / 3) * 10 - (1 / 3) * 20)

    def test_balanced_panel_row_count(self):
        # 300 months = 100 quarters; the first window needs the pre-sample,
        # so 99 rows survive without initials and 100 with them
        T, n, hid = 300, 2, 1
        mask = quarterly_mask(T, n, hid)
        qv = {(t, hid): float(t) for t in range(3, T + 1, 3)}
        assert build_mq_constraints(mask, qv, kind="hard").n_rows == 99
        init = np.zeros((5, n))
        assert build_mq_constraints(mask, qv, initial_values=init,
                                    kind="hard").n_rows == 100

    def test_observed_cell_in_window_rejected(self):
        obs = np.ones((6, 2), dtype=bool)
        obs[:, 1] = False
        obs[3, 1] = True  # inside the t=6 window
        with pytest.raises(ValidationError):
            build_mq_constraints(ObservationMask(obs), {(6, 1): 0.0},
                                 kind="hard")

    def test_out_of_range_release(self):
        mask = quarterly_mask(6, 2, 1)
        with pytest.raises(WindowOutOfRange):
            build_mq_constraints(mask, {(9, 1): 0.0}, kind="hard")

    def test_soft_variant_carries_variances(self):
        mask = quarterly_mask(12, 2, 1)
        cons = build_mq_constraints(mask, {(6, 1): 1.0}, kind="soft")
        assert cons.kind == "soft"
        np.testing.assert_allclose(cons.o, 1e-8)


class TestWeeklyConstraints:
    def test_triangular_weights(self):
        w = weekly_weights(4)
        np.testing.assert_allclose(w, [0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25])
        assert len(weekly_weights(13)) == 25
        assert weekly_weights(13).sum() == pytest.approx(13.0)
        assert weekly_weights(1).tolist() == [1.0]

    def test_rows(self):
        T, hid = 30, 1
        mask = quarterly_mask(T, 2, hid)
        sched = {(26, hid): (3.0, 13), (13, hid): (1.5, 13)}
        cons = build_weekly_constraints(mask, sched, kind="soft")
        # the t=13 window needs 25 weeks and is dropped
        assert cons.n_rows == 1 and cons.n_dropped == 1
        M = cons.M.to_dense()
        mpos = mask.missing_position_matrix()
        w = weekly_weights(13)
        for j in range(25):
            assert M[0, mpos[26 - 1 - j, hid]] == pytest.approx(w[j])

    def test_bad_n_w(self):
        mask = quarterly_mask(10, 2, 1)
        with pytest.raises(ValidationError):
            build_weekly_constraints(mask, {(8, 1): (1.0, 0)})


class TestAggregateWeekly:
    def test_constant_path(self):
        out = aggregate_weekly(np.full(30, 2.0), n_w=4)
        assert np.isnan(out[:7]).all()
        np.testing.assert_allclose(out[7:], 8.0)

    def test_matches_manual_dot(self):
        rng = np.random.default_rng(3)
        path = rng.standard_normal(40)
        out = aggregate_weekly(path, n_w=5)
        w = weekly_weights(5)
        t = 17
        want = sum(w[j] * path[t - 1 - j] for j in range(9))
        assert out[t] == pytest.approx(want)

    def test_too_short(self):
        with pytest.raises(ValidationError):
            aggregate_weekly(np.zeros(6), n_w=4)


class TestFills:
    def test_column_fill_values(self):
        panel = np.array([[1.0, np.nan], [3.0, np.nan]])
        np.testing.assert_allclose(column_fill_values(panel), [2.0, 0.0])

    def test_backfill_initials(self):
        blk = np.array([[np.nan, 1.0], [2.0, np.nan]])
        filled, was = backfill_initials(blk, np.array([10.0, 20.0]))
        np.testing.assert_allclose(filled, [[10.0, 1.0], [2.0, 20.0]])
        assert was.sum() == 2

    def test_constraint_level_fill_hits_window_levels(self):
        T, hid = 12, 1
        mask = quarterly_mask(T, 2, hid)
        cons = build_mq_constraints(mask, {(6, hid): 6.0, (11, hid): -3.0},
                                    kind="hard")
        fill = constraint_level_fill(mask, cons, np.array([0.0, 7.0]))
        mpos = mask.missing_position_matrix()
        # covered cells sit at z / sum(w); windows are t=2..6 and t=7..11
        assert fill[mpos[3, hid]] == pytest.approx(2.0)
        assert fill[mpos[8, hid]] == pytest.approx(-1.0)
        # uncovered tail copies the nearest covered cell
        assert fill[mpos[11, hid]] == pytest.approx(-1.0)

    def test_constraint_level_fill_falls_back_to_fill_value(self):
        mask = quarterly_mask(6, 2, 0)
        cons = build_mq_constraints(
            ObservationMask(np.ones((6, 2), dtype=bool) ^ [True, False]),
            {}, kind="hard")
        # no constraints at all: every missing cell gets the column fill
        fill = constraint_level_fill(mask, cons, np.array([5.0, 0.0]))
        np.testing.assert_allclose(fill, 5.0)


class TestConstraintSet:
    def test_soft_needs_variances(self):
        from bandmiss.band import SparseMatrix
        M = SparseMatrix.from_dense(np.array([[1.0, 1.0]]))
        with pytest.raises(ValidationError):
            ConstraintSet(M, np.array([1.0]), "soft")

    def test_empty_row_rejected(self):
        from bandmiss.band import SparseMatrix
        M = SparseMatrix.from_triples(2, 3, [(0, 0, 1.0)])
        with pytest.raises(ValidationError):
            ConstraintSet(M, np.zeros(2), "hard")
