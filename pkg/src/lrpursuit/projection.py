"""Projection of a new frame onto the row space of ``R``.

The coefficients solve ``min_v sum_i loss((v R)_i - x_i)`` over a uniformly
subsampled set of sensors.  L1 is solved by iteratively reweighted least
squares followed by an exact edge descent over the vertices of the L1
polytope (an L1 optimum interpolates ``r`` entries exactly).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContractError, ProjectionNorm

IRLS_EPS = 1e-6
IRLS_MAX_ITER = 100
GM_MAX_ITER = 50
MAD_SCALE = 1.4826
SIGMA_FLOOR = 1e-6


class DegenerateSubspaceError(ContractError):
    """The sampled columns of ``R`` do not have full row rank."""


@dataclass
class ProjectionResult:
    v: np.ndarray
    loss: float
    iterations: int
    subsample: np.ndarray
    sigma: float | None = None


def sample_sensors(n_sensors: int, period: int, rank: int, rng) -> np.ndarray:
    """Uniform sensor sample of size about ``n_sensors / period``.

    The sample never drops below ``max(10 * rank, rank + 1)`` sensors (or all
    of them, if there are fewer).
    """
    if period < 1:
        raise ContractError("subsample period must be >= 1")
    if period == 1:
        return np.arange(n_sensors)
    size = min(n_sensors, max(n_sensors // period, 10 * rank, rank + 1))
    if size >= n_sensors:
        return np.arange(n_sensors)
    return np.sort(rng.choice(n_sensors, size=size, replace=False))


def _columns(sensors: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return sensors
    return (sensors[:, None] * n + np.arange(n)).ravel()


def _weighted_solve(Rs, xs, weights, ridge):
    G = (Rs * weights) @ Rs.T
    if ridge:
        G[np.diag_indices_from(G)] += ridge
    return np.linalg.solve(G, (Rs * weights) @ xs)


def _least_squares(Rs, xs, ridge):
    if ridge:
        return _weighted_solve(Rs, xs, np.ones(xs.size), ridge)
    return np.linalg.lstsq(Rs.T, xs, rcond=None)[0]


def _l1(Rs, xs, ridge, tol=1e-12):
    v = _least_squares(Rs, xs, ridge)
    best = np.abs(xs - v @ Rs).sum()
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        res = xs - v @ Rs
        weights = 1.0 / np.maximum(np.abs(res), IRLS_EPS)
        try:
            v_new = _weighted_solve(Rs, xs, weights, ridge)
        except np.linalg.LinAlgError:
            break
        obj = np.abs(xs - v_new @ Rs).sum()
        if obj > best:
            break
        done = best - obj <= tol * max(best, 1.0)
        v, best = v_new, obj
        if done:
            break
    return _polish(Rs, xs, v, best), it


def _edge_step(res, a):
    # min_t sum |res_i - t a_i| is a weighted median of res_i / a_i
    nz = np.abs(a) > 1e-14
    if not nz.any():
        return 0.0, -1
    idx = np.flatnonzero(nz)
    ratio = res[idx] / a[idx]
    order = np.argsort(ratio, kind="stable")
    cum = np.cumsum(np.abs(a[idx])[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(ratio[order[k]]), int(idx[order[k]])


def _polish(Rs, xs, v, best, max_pivots=200, tol=1e-12):
    """Descend along the edges of the L1 polytope until no edge helps.

    At a vertex the loss is separable in the residuals of the ``r`` basis
    entries, so checking each edge in both directions certifies optimality.
    """
    r = Rs.shape[0]
    if xs.size < r:
        return v
    basis = np.argsort(np.abs(xs - v @ Rs), kind="stable")[:r]
    try:
        cand = np.linalg.solve(Rs[:, basis].T, xs[basis])
    except np.linalg.LinAlgError:
        return v
    start, start_best = v, best
    v, best = cand, np.abs(xs - cand @ Rs).sum()
    for _ in range(max_pivots):
        try:
            D = np.linalg.inv(Rs[:, basis].T).T
        except np.linalg.LinAlgError:
            break
        res = xs - v @ Rs
        step = None
        for k in range(r):
            a = D[k] @ Rs
            t, enter = _edge_step(res, a)
            if enter < 0 or enter in basis:
                continue
            obj = np.abs(res - t * a).sum()
            if obj < best - tol * max(best, 1.0) and (step is None or obj < step[0]):
                step = (obj, k, t, enter)
        if step is None:
            break
        best, k, t, enter = step
        v = v + t * D[k]
        basis[k] = enter
    return v if best <= start_best else start


def _geman_mcclure(Rs, xs, ridge, tol=1e-10):
    v, _ = _l1(Rs, xs, ridge)
    sigma = SIGMA_FLOOR
    it = 0
    for it in range(1, GM_MAX_ITER + 1):
        res = xs - v @ Rs
        sigma = max(MAD_SCALE * float(np.median(np.abs(res))), SIGMA_FLOOR)
        s2 = sigma * sigma
        # IRLS weight rho'(u) / u for rho(u) = u^2 / (u^2 + sigma^2), up to a constant
        weights = s2 / (res * res + s2) ** 2
        weights /= weights.max()
        try:
            v_new = _weighted_solve(Rs, xs, weights, ridge)
        except np.linalg.LinAlgError:
            break
        moved = np.linalg.norm(v_new - v)
        v = v_new
        if moved <= tol * (1.0 + np.linalg.norm(v)):
            break
    return v, it, sigma


def geman_mcclure_loss(res: np.ndarray, sigma: float) -> float:
    r2 = res * res
    return float(np.sum(r2 / (r2 + sigma * sigma)))


def project(x, R, norm="l1", period: int = 1, rng=None, sensor_size: int = 1,
            ridge: float = 0.0) -> ProjectionResult:
    """Coefficients of ``x`` in the row space of ``R`` under the chosen loss.

    ``ridge > 0`` adds Tikhonov damping to every normal-equation solve and
    skips the rank check; the pursuit falls back to it when ``R`` is
    degenerate.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    R = np.asarray(R, dtype=float)
    norm = ProjectionNorm.parse(norm)
    if R.ndim != 2 or R.shape[1] != x.size:
        raise ContractError(f"frame of length {x.size} does not match subspace {R.shape}")
    if x.size % sensor_size:
        raise ContractError("frame length is not a multiple of the sensor size")
    rank = R.shape[0]
    if rng is None:
        rng = np.random.default_rng(0)
    sensors = sample_sensors(x.size // sensor_size, period, rank, rng)
    if sensors.size == 0:
        raise ContractError("empty sensor sample")
    cols = _columns(sensors, sensor_size)
    Rs, xs = R[:, cols], x[cols]
    if ridge <= 0.0 and np.linalg.matrix_rank(Rs) < rank:
        raise DegenerateSubspaceError(f"sampled subspace has rank below {rank}")

    sigma = None
    if norm is ProjectionNorm.L2:
        v = _least_squares(Rs, xs, ridge)
        it = 1
        loss = float(np.sum((xs - v @ Rs) ** 2))
    elif norm is ProjectionNorm.L1:
        v, it = _l1(Rs, xs, ridge)
        loss = float(np.abs(xs - v @ Rs).sum())
    else:
        v, it, sigma = _geman_mcclure(Rs, xs, ridge)
        loss = geman_mcclure_loss(xs - v @ Rs, sigma)
    return ProjectionResult(v=v, loss=loss, iterations=it, subsample=sensors, sigma=sigma)


def residuals(x, v, R, sensor_size: int = 1) -> np.ndarray:
    """Per-sensor L1 residual ``sum over the sensor's entries of |x - v R|``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    diff = np.abs(x - np.asarray(v, dtype=float) @ R)
    if sensor_size == 1:
        return diff
    return diff.reshape(-1, sensor_size).sum(axis=1)
