"""Alternating randomised block-coordinate descent for interval completion.

One sweep runs ``inner_limit`` block updates of ``L`` (each touching one
randomly chosen column of ``L`` per sampled row) followed by as many block
updates of ``R``.  With ``R`` fixed the objective separates over the rows of
``L``, and with ``L`` fixed over the columns of ``R``, so every index in a
block can be updated independently; a per-index backtracking line search
therefore keeps the whole objective non-increasing.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (
    ContractError,
    FactorPair,
    ObservationWindow,
    PursuitConfig,
    hinge_residual,
    objective_value,
)


@dataclass
class CurvatureEstimate:
    """Coordinate-wise curvature of the objective at the current point."""

    W: np.ndarray
    V: np.ndarray


@dataclass
class SweepPlan:
    """Index blocks and column choices for each inner iteration of one sweep."""

    row_blocks: list
    row_choices: list
    col_blocks: list
    col_choices: list

    @property
    def inner_limit(self) -> int:
        return len(self.row_blocks)

    def write_sets(self):
        """Yield ``(phase, factor_entries, cache_lines)`` per inner iteration.

        ``factor_entries`` are the ``(i, r)`` / ``(r, j)`` coordinates written
        and ``cache_lines`` the rows (L phase) or columns (R phase) of ``A``.
        """
        for rows, choice in zip(self.row_blocks, self.row_choices):
            yield "L", list(zip(rows.tolist(), choice.tolist())), rows.tolist()
        for cols, choice in zip(self.col_blocks, self.col_choices):
            yield "R", list(zip(choice.tolist(), cols.tolist())), cols.tolist()


@dataclass
class SweepStats:
    objective_before: float
    objective_after: float
    updates: int
    backtracked: int
    rejected: int
    max_step: float


def curvature(f: FactorPair, w: ObservationWindow, nu: float) -> CurvatureEstimate:
    active = (hinge_residual(f.A, w.lower, w.upper) != 0.0).astype(float)
    return CurvatureEstimate(W=nu + active @ (f.R ** 2).T, V=nu + (f.L ** 2).T @ active)


def _restricted_L(f, w, nu, i, q, t):
    d = hinge_residual(f.A[i] + t * f.R[q], w.lower[i], w.upper[i])
    return 0.5 * np.dot(d, d) + 0.5 * nu * (f.L[i, q] + t) ** 2


def _restricted_R(f, w, nu, q, j, t):
    d = hinge_residual(f.A[:, j] + t * f.L[:, q], w.lower[:, j], w.upper[:, j])
    return 0.5 * np.dot(d, d) + 0.5 * nu * (f.R[q, j] + t) ** 2


def _backtrack(phi, step, max_halvings):
    base = phi(0.0)
    for _ in range(max_halvings + 1):
        if phi(step) <= base:
            return step
        step *= 0.5
    return 0.0


def step_L(i: int, q: int, f: FactorPair, w: ObservationWindow, nu: float,
           backtracking: bool = False, max_halvings: int = 20) -> float:
    """Coordinate step for ``L[i, q]``: minus the partial derivative over its curvature.

    Does not modify ``f``; the caller applies ``L[i, q] += step`` and
    ``A[i, :] += step * R[q, :]``.
    """
    d = hinge_residual(f.A[i], w.lower[i], w.upper[i])
    rq = f.R[q]
    g = nu * f.L[i, q] + np.dot(d, rq)
    if g == 0.0:
        return 0.0
    curv = nu + np.dot(rq[d != 0.0], rq[d != 0.0])
    step = -g / curv
    if backtracking:
        step = _backtrack(lambda t: _restricted_L(f, w, nu, i, q, t), step, max_halvings)
    return float(step)


def step_R(q: int, j: int, f: FactorPair, w: ObservationWindow, nu: float,
           backtracking: bool = False, max_halvings: int = 20) -> float:
    """Mirror image of :func:`step_L` for ``R[q, j]``; the cache update is ``A[:, j] += step * L[:, q]``."""
    d = hinge_residual(f.A[:, j], w.lower[:, j], w.upper[:, j])
    lq = f.L[:, q]
    g = nu * f.R[q, j] + np.dot(d, lq)
    if g == 0.0:
        return 0.0
    curv = nu + np.dot(lq[d != 0.0], lq[d != 0.0])
    step = -g / curv
    if backtracking:
        step = _backtrack(lambda t: _restricted_R(f, w, nu, q, j, t), step, max_halvings)
    return float(step)


def _block(n: int, size: int | None, rng) -> np.ndarray:
    if size is None or size >= n:
        return np.arange(n, dtype=np.int64)
    if size < 1:
        raise ContractError("block size must be positive")
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def plan_sweep(shape: tuple[int, int], rank: int, rng, row_block: int | None = None,
               col_block: int | None = None, inner_limit: int | None = None) -> SweepPlan:
    """Sample one sweep.

    Blocks default to all rows and all columns.  The default ``inner_limit``
    makes every coordinate of both factors expect exactly one visit.
    """
    n_rows, n_cols = shape
    if inner_limit is None:
        b_row = n_rows if row_block is None else min(row_block, n_rows)
        b_col = n_cols if col_block is None else min(col_block, n_cols)
        ratios = [rank * n / b for n, b in ((n_rows, b_row), (n_cols, b_col)) if b > 0]
        inner_limit = math.ceil(max(ratios)) if ratios else 0
    plan = SweepPlan([], [], [], [])
    for _ in range(inner_limit):
        rows = _block(n_rows, row_block, rng)
        plan.row_blocks.append(rows)
        plan.row_choices.append(rng.integers(0, rank, size=rows.size).astype(np.int64))
    for _ in range(inner_limit):
        cols = _block(n_cols, col_block, rng)
        plan.col_blocks.append(cols)
        plan.col_choices.append(rng.integers(0, rank, size=cols.size).astype(np.int64))
    return plan


def _validate_plan(plan: SweepPlan, shape, rank) -> None:
    for blocks, choices, n in ((plan.row_blocks, plan.row_choices, shape[0]),
                               (plan.col_blocks, plan.col_choices, shape[1])):
        for idx, ch in zip(blocks, choices):
            if idx.size != ch.size:
                raise ContractError("block and choice lengths differ")
            if idx.size and (idx.min() < 0 or idx.max() >= n or np.unique(idx).size != idx.size):
                raise ContractError("block indices out of range or repeated")
            if ch.size and (ch.min() < 0 or ch.max() >= rank):
                raise ContractError("column choice out of range")


def sweep(f: FactorPair, w: ObservationWindow, cfg: PursuitConfig, plan: SweepPlan,
          track_objective: bool = True, validate: bool = True) -> SweepStats:
    """Run one sweep of ``plan`` on ``f`` in place and return its statistics."""
    if f.A.shape != w.shape or f.rank != cfg.rank:
        raise ContractError(f"factors {f.L.shape}x{f.R.shape} do not match window {w.shape}, rank {cfg.rank}")
    if validate:
        _validate_plan(plan, w.shape, cfg.rank)
    nu = cfg.reg_weight
    before = objective_value(f, w, nu) if track_objective else math.nan
    stats = np.zeros(4)
    for rows, choice in zip(plan.row_blocks, plan.row_choices):
        _kernels.row_block(f.L, f.R, f.A, w.lower, w.upper, rows, choice, nu,
                           cfg.backtracking, cfg.max_halvings, stats)
    if plan.col_blocks:
        # columns of R are rows of R.T in the transposed problem
        lo_t, hi_t = w.transposed_bounds()
        r_t, l_t, a_t = (np.ascontiguousarray(m.T) for m in (f.R, f.L, f.A))
        for cols, choice in zip(plan.col_blocks, plan.col_choices):
            _kernels.row_block(r_t, l_t, a_t, lo_t, hi_t, cols, choice, nu,
                               cfg.backtracking, cfg.max_halvings, stats)
        f.R[...] = r_t.T
        f.A[...] = a_t.T
    after = objective_value(f, w, nu) if track_objective else math.nan
    return SweepStats(before, after, int(stats[0]), int(stats[1]), int(stats[2]), float(stats[3]))


def complete(f_prev: FactorPair, w: ObservationWindow, cfg: PursuitConfig, budget: int,
             rng=None, inplace: bool = False, deadline: float | None = None,
             history: list | None = None) -> FactorPair:
    """Warm-started completion: ``budget`` sweeps from ``f_prev``.

    With ``deadline`` (a ``time.perf_counter`` value) sweeps continue past
    the budget until the deadline passes; ``budget`` is then the minimum.
    Per-sweep :class:`SweepStats` are appended to ``history`` when given.
    """
    if f_prev.A.shape != w.shape or f_prev.rank != cfg.rank:
        raise ContractError(f"factors {f_prev.A.shape} (rank {f_prev.rank}) do not match "
                            f"window {w.shape} (rank {cfg.rank})")
    if budget < 0:
        raise ContractError("budget must be nonnegative")
    f = f_prev if inplace else f_prev.copy()
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    done = 0
    while done < budget or (deadline is not None and time.perf_counter() < deadline):
        plan = plan_sweep(w.shape, cfg.rank, rng)
        stats = sweep(f, w, cfg, plan, track_objective=history is not None, validate=False)
        if history is not None:
            history.append(stats)
        done += 1
    return f


def init_factors(rows: int, rank: int, cols: int, rng, scale: float = 1e-2) -> FactorPair:
    """Zero ``L`` and a small random ``R``.

    All-zero factors are a stationary point of the objective (every partial
    derivative vanishes there), so ``R`` gets a seeded perturbation.
    """
    return FactorPair(np.zeros((rows, rank)), scale * rng.standard_normal((rank, cols)))
