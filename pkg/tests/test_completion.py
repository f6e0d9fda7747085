import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from oracles import naive_objective
from lrpursuit import _kernels
from lrpursuit.completion import (
    SweepPlan,
    complete,
    curvature,
    init_factors,
    plan_sweep,
    step_L,
    step_R,
    sweep,
)
from lrpursuit.model import (
    ContractError,
    FactorPair,
    ObservationWindow,
    PursuitConfig,
    feasibility,
    hinge_residual,
    objective_gradient,
    objective_value,
)


def cfg_for(w, rank, **kw):
    return PursuitConfig(window_len=max(w.shape[0], rank), rank=rank, **kw)


def restricted(i, q, f, w, nu, t, axis):
    """Objective as a function of one coordinate, by naive evaluation."""
    L, R = f.L.copy(), f.R.copy()
    if axis == "L":
        L[i, q] += t
    else:
        R[i, q] += t
    return naive_objective(L, R, w.lower, w.upper, nu)


class TestSteps:
    def test_one_by_one_step(self):
        w = ObservationWindow.from_matrix([[10.0]], 0.0)
        f = FactorPair([[1.0]], [[1.0]])
        # g = -8.9, W = 0.1 + 1^2
        assert step_L(0, 0, f, w, 0.1) == pytest.approx(-(-8.9) / 1.1, rel=1e-14)
        assert step_L(0, 0, f, w, 0.1) == pytest.approx(8.090909090909, rel=1e-12)
        # transposed problem: V = 0.1 + L^2
        assert step_R(0, 0, f, w, 0.1) == pytest.approx(8.9 / 1.1, rel=1e-14)

    def test_stationary_coordinate(self):
        w = ObservationWindow.from_matrix(np.zeros((2, 3)), 1.0)
        f = FactorPair(np.zeros((2, 1)), np.ones((1, 3)))
        assert step_L(0, 0, f, w, 0.1) == 0.0
        f = FactorPair(np.ones((2, 1)), np.zeros((1, 3)))
        assert step_R(0, 1, f, w, 0.1) == 0.0

    def test_matches_gradient_over_curvature(self):
        rng = np.random.default_rng(3)
        w, f = random_instance(rng, 5, 6, 2, absent=0.2)
        gL, gR = objective_gradient(f, w, 0.1)
        c = curvature(f, w, 0.1)
        assert np.all(c.W >= 0.1) and np.all(c.V >= 0.1)
        assert step_L(2, 1, f, w, 0.1) == pytest.approx(-gL[2, 1] / c.W[2, 1], rel=1e-12)
        assert step_R(1, 4, f, w, 0.1) == pytest.approx(-gR[1, 4] / c.V[1, 4], rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), axis=st.sampled_from(["L", "R"]))
    def test_backtracked_step_never_increases_restriction(self, seed, axis):
        rng = np.random.default_rng(seed)
        w, f = random_instance(rng, 5, 5, 2, delta=0.3, scale=4.0)
        i, q = int(rng.integers(0, 5)), int(rng.integers(0, 2))
        if axis == "L":
            t = step_L(i, q, f, w, 0.1, backtracking=True)
            args = (i, q)
        else:
            t = step_R(q, i, f, w, 0.1, backtracking=True)
            args = (q, i)
        before = restricted(*args, f, w, 0.1, 0.0, axis)
        after = restricted(*args, f, w, 0.1, t, axis)
        assert after <= before + 1e-12 * max(1.0, before)


class TestKernel:
    def test_row_kernel_matches_reference_without_backtracking(self):
        rng = np.random.default_rng(4)
        w, f = random_instance(rng, 6, 9, 3, absent=0.1)
        ref = f.copy()
        rows = np.arange(6, dtype=np.int64)
        choice = rng.integers(0, 3, 6)
        for i, q in zip(rows, choice):
            d = step_L(int(i), int(q), ref, w, 0.1)
            ref.L[i, q] += d
            ref.A[i] += d * ref.R[q]
        out = f.copy()
        _kernels.row_block(out.L, out.R, out.A, w.lower, w.upper, rows, choice, 0.1, False, 20,
                           np.zeros(4))
        assert np.allclose(out.L, ref.L, rtol=1e-12, atol=1e-12)
        assert np.allclose(out.A, ref.A, rtol=1e-12, atol=1e-12)

    def test_column_phase_matches_reference(self):
        rng = np.random.default_rng(6)
        w, f = random_instance(rng, 6, 9, 3, absent=0.1)
        cols = np.arange(9, dtype=np.int64)
        choice = rng.integers(0, 3, 9)
        ref = f.copy()
        for j, q in zip(cols, choice):
            d = step_R(int(q), int(j), ref, w, 0.1)
            ref.R[q, j] += d
            ref.A[:, j] += d * ref.L[:, q]
        plan = SweepPlan([], [], [cols], [choice])
        out = f.copy()
        sweep(out, w, cfg_for(w, 3, backtracking=False), plan)
        assert np.allclose(out.R, ref.R, rtol=1e-12, atol=1e-12)
        assert np.allclose(out.A, ref.A, rtol=1e-12, atol=1e-12)


class TestSweep:
    def test_empty_plan_is_identity(self):
        rng = np.random.default_rng(0)
        w, f = random_instance(rng, 4, 5, 2)
        g = f.copy()
        stats = sweep(g, w, cfg_for(w, 2), plan_sweep(w.shape, 2, rng, inner_limit=0))
        assert np.array_equal(g.L, f.L) and np.array_equal(g.R, f.R) and np.array_equal(g.A, f.A)
        assert stats.objective_after == stats.objective_before

    def test_default_plan_is_one_epoch(self):
        plan = plan_sweep((7, 11), 3, np.random.default_rng(0))
        assert plan.inner_limit == 3
        assert all(b.size == 7 for b in plan.row_blocks)
        assert all(b.size == 11 for b in plan.col_blocks)

    def test_partial_blocks(self):
        plan = plan_sweep((10, 20), 2, np.random.default_rng(0), row_block=5, col_block=4)
        assert plan.inner_limit == 10
        for b in plan.row_blocks + plan.col_blocks:
            assert np.unique(b).size == b.size

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 8), cols=st.integers(1, 8),
           rank=st.integers(1, 4), rb=st.integers(1, 8), cb=st.integers(1, 8))
    def test_write_sets_are_disjoint(self, seed, rows, cols, rank, rb, cb):
        plan = plan_sweep((rows, cols), rank, np.random.default_rng(seed), row_block=rb, col_block=cb)
        for phase, entries, lines in plan.write_sets():
            assert len(set(entries)) == len(entries)
            assert len(set(lines)) == len(lines)
            target = [e[0] for e in entries] if phase == "L" else [e[1] for e in entries]
            assert target == lines

    def test_r_phase_does_not_increase_objective(self):
        rng = np.random.default_rng(8)
        w, f = random_instance(rng, 5, 5, 2, delta=0.2)
        plan = plan_sweep(w.shape, 2, rng)
        plan.row_blocks, plan.row_choices = [], []
        stats = sweep(f, w, cfg_for(w, 2), plan)
        assert stats.objective_after <= stats.objective_before

    def test_monotone_with_backtracking(self):
        rng = np.random.default_rng(12)
        w, _ = random_instance(rng, 50, 60, 4, delta=0.5, absent=0.1)
        cfg = cfg_for(w, 4)
        f = init_factors(50, 4, 60, rng)
        prev = objective_value(f, w, cfg.reg_weight)
        for _ in range(200):
            plan = plan_sweep(w.shape, 4, rng)
            s = sweep(f, w, cfg, plan)
            assert s.objective_before == pytest.approx(prev, rel=1e-12)
            assert s.objective_after <= s.objective_before + 1e-12 * abs(s.objective_before)
            prev = s.objective_after

    def test_cache_coherent_after_sweeps(self):
        rng = np.random.default_rng(2)
        w, f = random_instance(rng, 10, 12, 3, absent=0.2)
        f = complete(f, w, cfg_for(w, 3), 50, rng=rng)
        assert np.abs(f.A - f.L @ f.R).max() <= 1e-8 * (1 + np.abs(f.A).max())

    def test_invalid_plan_rejected(self):
        rng = np.random.default_rng(0)
        w, f = random_instance(rng, 3, 4, 2)
        bad = SweepPlan([np.array([0, 0])], [np.array([0, 1])], [], [])
        with pytest.raises(ContractError):
            sweep(f, w, cfg_for(w, 2), bad)
        bad = SweepPlan([np.array([0])], [np.array([2])], [], [])
        with pytest.raises(ContractError):
            sweep(f, w, cfg_for(w, 2), bad)


class TestComplete:
    def test_zero_budget_returns_input(self):
        rng = np.random.default_rng(0)
        w, f = random_instance(rng, 4, 5, 2)
        g = complete(f, w, cfg_for(w, 2), 0)
        assert np.array_equal(g.L, f.L) and np.array_equal(g.R, f.R)

    def test_zero_matrix_fixed_point(self):
        w = ObservationWindow.from_matrix(np.zeros((4, 6)), 1.0)
        f = complete(FactorPair.zeros(4, 2, 6), w, cfg_for(w, 2), 10)
        assert objective_value(f, w, 0.1) == 0.0
        assert not f.L.any() and not f.R.any()

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(1)
        w, f = random_instance(rng, 8, 9, 2, absent=0.1)
        cfg = cfg_for(w, 2, rng_seed=42)
        a = complete(f, w, cfg, 20)
        b = complete(f, w, cfg, 20)
        assert np.array_equal(a.L, b.L) and np.array_equal(a.R, b.R) and np.array_equal(a.A, b.A)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(1)
        w, f = random_instance(rng, 4, 5, 2)
        with pytest.raises(ContractError):
            complete(f, w, cfg_for(w, 3), 1)
        with pytest.raises(ContractError):
            complete(FactorPair.zeros(3, 2, 5), w, cfg_for(w, 2), 1)

    def test_wall_clock_mode_runs_at_least_budget(self):
        import time

        rng = np.random.default_rng(1)
        w, f = random_instance(rng, 6, 7, 2)
        history = []
        complete(f, w, cfg_for(w, 2), 2, deadline=time.perf_counter() + 0.05, history=history)
        assert len(history) >= 2

    def test_rank_one_violations_vanish_at_limit(self):
        # the regulariser keeps a few products a hair outside their intervals
        # at any stationary point; the violations themselves shrink to O(nu)
        rng = np.random.default_rng(11)
        u, v = rng.uniform(1, 3, 8), rng.uniform(1, 3, 8)
        w = ObservationWindow.from_matrix(np.outer(u, v) + rng.uniform(-0.5, 0.5, (8, 8)), 0.5)
        cfg = cfg_for(w, 1, delta=0.5)
        f = complete(init_factors(8, 1, 8, rng), w, cfg, 500, rng=rng)
        d = np.abs(hinge_residual(f.A, w.lower, w.upper))
        assert d.max() <= cfg.reg_weight

    @pytest.mark.xfail(strict=True, reason="every stationary point with nonzero factors leaves "
                       "at least one of the 64 products outside its interval")
    def test_rank_one_feasibility_example(self):
        rng = np.random.default_rng(11)
        u, v = rng.uniform(1, 3, 8), rng.uniform(1, 3, 8)
        w = ObservationWindow.from_matrix(np.outer(u, v) + rng.uniform(-0.5, 0.5, (8, 8)), 0.5)
        cfg = cfg_for(w, 1, delta=0.5)
        f = complete(init_factors(8, 1, 8, rng), w, cfg, 500, rng=rng)
        assert feasibility(f, w) >= 0.99
