"""Synthetic streams, reference solutions and mask scoring.

Frames follow ``x = c R*(k) + e`` with entries of ``e`` uniform on
``[-delta, delta]``; a fraction of sensors is then replaced by the clean value
shifted by ``+-sparse_magnitude``, placed as square blobs.  ``R*(k)`` rotates
by ``drift_rate`` radians per frame in the plane of its first row and a fixed
direction outside the subspace.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import (
    ContractError,
    EventMask,
    FactorPair,
    ObservationWindow,
    objective_gradient,
    objective_value,
)


@dataclass(frozen=True)
class SyntheticSpec:
    frame_shape: tuple[int, int] = (32, 32)
    sensor_size: int = 1
    rank: int = 4
    delta: float = 5.0
    sparse_fraction: float = 0.0
    sparse_magnitude: float | None = None
    drift_rate: float = 0.0
    blob_size: int = 4
    coef_jitter: float = 0.5
    signal_scale: float = 50.0
    offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparse_fraction < 0.5:
            raise ContractError("sparse_fraction must lie in [0, 0.5)")
        if self.delta < 0 or self.rank < 1 or self.sensor_size < 1 or self.blob_size < 1:
            raise ContractError("invalid synthetic stream parameters")
        if self.sparse_fraction > 0 and not self.magnitude > 2 * self.delta:
            raise ContractError("sparse_magnitude must exceed 2 * delta")

    @property
    def n_sensors(self) -> int:
        return self.frame_shape[0] * self.frame_shape[1]

    @property
    def n_cols(self) -> int:
        return self.n_sensors * self.sensor_size

    @property
    def magnitude(self) -> float:
        return 10.0 * self.delta if self.sparse_magnitude is None else float(self.sparse_magnitude)


@dataclass
class SyntheticFrame:
    x: np.ndarray
    truth: EventMask
    R: np.ndarray
    c: np.ndarray
    noise: np.ndarray = field(repr=False)

    @property
    def clean(self) -> np.ndarray:
        return self.c @ self.R


def _blob_mask(spec: SyntheticSpec, rng) -> np.ndarray:
    h, w = spec.frame_shape
    target = int(round(spec.sparse_fraction * spec.n_sensors))
    mask = np.zeros((h, w), dtype=bool)
    order: list[np.ndarray] = []
    b = min(spec.blob_size, h, w)
    while np.count_nonzero(mask) < target:
        top, left = rng.integers(0, h - b + 1), rng.integers(0, w - b + 1)
        blob = np.zeros_like(mask)
        blob[top:top + b, left:left + b] = True
        fresh = np.flatnonzero(blob & ~mask)
        mask.flat[fresh] = True
        order.append(fresh)
    excess = np.count_nonzero(mask) - target
    if excess > 0:
        mask.flat[order[-1][-excess:]] = False
    return mask.ravel()


def iter_stream(spec: SyntheticSpec, n_frames: int) -> Iterator[SyntheticFrame]:
    rng = np.random.default_rng(spec.seed)
    r, n_cols = spec.rank, spec.n_cols
    basis, _ = np.linalg.qr(rng.standard_normal((n_cols, r + 1)))
    basis = basis.T
    scale = spec.signal_scale * np.sqrt(n_cols / r)
    c_mean = rng.standard_normal(r)
    for k in range(n_frames):
        angle = k * spec.drift_rate
        R = basis[:r].copy()
        R[0] = np.cos(angle) * basis[0] + np.sin(angle) * basis[r]
        R *= scale
        c = c_mean + spec.coef_jitter * rng.standard_normal(r)
        noise = rng.uniform(-spec.delta, spec.delta, n_cols) if spec.delta > 0 else np.zeros(n_cols)
        x = c @ R + noise
        if spec.sparse_fraction > 0:
            events = _blob_mask(spec, rng)
            signs = rng.choice([-1.0, 1.0], size=spec.n_sensors)
            shift = np.repeat(signs * spec.magnitude, spec.sensor_size)
            hit = np.repeat(events, spec.sensor_size)
            x[hit] = (c @ R)[hit] + shift[hit]
        else:
            events = np.zeros(spec.n_sensors, dtype=bool)
        yield SyntheticFrame(x=x + spec.offset, truth=EventMask(~events), R=R, c=c, noise=noise)


def generate_stream(spec: SyntheticSpec, n_frames: int) -> list[SyntheticFrame]:
    return list(iter_stream(spec, n_frames))


def inter_frame_variation(frames: Sequence[SyntheticFrame], window_len: int, delta: float,
                          nu: float) -> np.ndarray:
    """``|f(L_k, R_k; M_k) - f(L_k, R_k; M_{k-1})|`` at the true factors, per frame.

    The empirical counterpart of the bounded-variation assumption; ``L_k``
    stacks the true coefficients of the frames in window ``k``.
    """
    out = []
    # every entry is present, so the global range only has to be valid
    span = max(float(np.max(np.abs(fr.x))) for fr in frames) + delta + 1.0 if frames else 1.0
    big = (-span, span)
    for k in range(window_len, len(frames)):
        cur = frames[k - window_len + 1:k + 1]
        prev = frames[k - window_len:k]
        f = FactorPair(np.array([fr.c for fr in cur]), frames[k].R)
        w_cur = ObservationWindow.from_matrix([fr.x for fr in cur], delta, value_range=big)
        w_prev = ObservationWindow.from_matrix([fr.x for fr in prev], delta, value_range=big)
        out.append(abs(objective_value(f, w_cur, nu) - objective_value(f, w_prev, nu)))
    return np.array(out)


BRUTE_FORCE_MAX_ENTRIES = 64


def brute_force_complete(w: ObservationWindow, rank: int, nu: float, restarts: int = 32,
                         seed: int = 0, max_iter: int = 20000) -> FactorPair:
    """Best of ``restarts`` full-gradient quasi-Newton solves from random points.

    For tiny instances only; serves as the reference optimum ``f*``.
    """
    rows, cols = w.shape
    if rows * cols > BRUTE_FORCE_MAX_ENTRIES:
        raise ContractError(f"brute force is limited to {BRUTE_FORCE_MAX_ENTRIES} entries")
    n_l = rows * rank

    def unpack(z):
        return FactorPair(z[:n_l].reshape(rows, rank), z[n_l:].reshape(rank, cols))

    def fun(z):
        f = unpack(z)
        gl, gr = objective_gradient(f, w, nu)
        return objective_value(f, w, nu), np.concatenate([gl.ravel(), gr.ravel()])

    bound = max(np.abs(w.lower).max(), np.abs(w.upper).max(), 1.0)
    spread = np.sqrt(bound / rank)
    rng = np.random.default_rng(seed)
    best, best_val = None, np.inf
    for _ in range(restarts):
        z0 = spread * rng.standard_normal(n_l + rank * cols)
        res = minimize(fun, z0, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "maxfun": 2 * max_iter,
                                "ftol": 1e-16, "gtol": 1e-13, "maxcor": 30})
        if res.fun < best_val:
            best, best_val = res.x, res.fun
    return unpack(best)


@dataclass(frozen=True)
class MaskMetrics:
    recall: float
    specificity: float
    fpr: float
    fnr: float
    precision: float
    f1: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    FIELDS = ("recall", "specificity", "fpr", "fnr", "precision", "f1")

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "MaskMetrics":
        recall = tp / (tp + fn) if tp + fn else 1.0
        specificity = tn / (tn + fp) if tn + fp else 1.0
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision = 1.0 if tp + fn == 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(recall, specificity, 1.0 - specificity, 1.0 - recall, precision, f1,
                   int(tp), int(fp), int(tn), int(fn))

    def as_row(self) -> list[str]:
        return [f"{getattr(self, name):.5f}" for name in self.FIELDS]


def _events(mask) -> np.ndarray:
    if isinstance(mask, EventMask):
        return mask.events.ravel()
    return ~np.asarray(mask, dtype=bool).ravel()


def score_masks(predicted: Iterable, truth: Iterable, valid: Iterable | None = None) -> MaskMetrics:
    """Pool a confusion matrix over frames; events (False in a mask) are positives.

    ``valid`` optionally excludes pixels (False = not scored) per frame.
    """
    predicted, truth = list(predicted), list(truth)
    if not predicted:
        raise ContractError("no masks to score")
    if len(predicted) != len(truth):
        raise ContractError(f"{len(predicted)} predicted masks vs {len(truth)} ground-truth masks")
    valid = [None] * len(truth) if valid is None else list(valid)
    tp = fp = tn = fn = 0
    for p, t, v in zip(predicted, truth, valid):
        p, t = _events(p), _events(t)
        if p.shape != t.shape:
            raise ContractError("mask dimensions differ")
        if v is not None:
            keep = np.asarray(v, dtype=bool).ravel()
            p, t = p[keep], t[keep]
        tp += int(np.count_nonzero(p & t))
        fp += int(np.count_nonzero(p & ~t))
        fn += int(np.count_nonzero(~p & t))
        tn += int(np.count_nonzero(~p & ~t))
    return MaskMetrics.from_counts(tp, fp, tn, fn)


def metrics_csv(rows: Iterable[tuple[str, str, MaskMetrics]]) -> str:
    """Metrics keyed by category and sequence, one CSV row each."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "sequence", *MaskMetrics.FIELDS])
    for category, sequence, m in rows:
        writer.writerow([category, sequence, *m.as_row()])
    return buf.getvalue()


def tracking_gaps(spec: SyntheticSpec, cfg, n_frames: int, sample_at: Sequence[int],
                  offline_sweeps: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Online objective minus a warm-started offline solve, at chosen steps.

    The first ``cfg.window_len`` frames warm the session up; ``n_frames``
    further frames are streamed.  At each step index in ``sample_at`` the
    current window is re-solved with ``offline_sweeps`` sweeps starting from
    the online factors, so every gap is nonnegative.  Returns the gaps and
    the per-step online objective.
    """
    from .completion import complete
    from .pursuit import PursuitSession

    frames = iter_stream(spec, cfg.window_len + n_frames)
    warm = [next(frames).x for _ in range(cfg.window_len)]
    s = PursuitSession.init(cfg, warm, sensor_size=spec.sensor_size, frame_shape=spec.frame_shape)
    wanted = set(int(k) for k in sample_at)
    gaps, series = [], []
    for k, fr in enumerate(frames):
        s.step(fr.x)
        online = s.track_metrics().objective
        series.append(online)
        if k in wanted:
            off = complete(s.factors, s.window, cfg, offline_sweeps, rng=np.random.default_rng(k))
            gaps.append(online - objective_value(off, s.window, cfg.reg_weight))
    return np.array(gaps), np.array(series)
