"""Per-frame residual threshold from a histogram of thresholds.

Each interior pixel that is the maximum of its 3x3 neighbourhood votes for
every threshold at which it would show up as an isolated pattern of one or
two pixels: the bins ``v3 + 1 .. v1``, where ``v1 >= v2 >= v3`` are the three
largest values of the neighbourhood.  The least-width run of bins holding
half of the votes is treated as noise; the threshold is the first bin to its
right whose count falls below ``fraction * n_pixels``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import EventMask


@dataclass
class ThresholdHistogram:
    counts: np.ndarray
    mode_region: tuple[int, int] | None = None
    chosen_threshold: int | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        lines = ["bin,count"]
        lines += [f"{b},{int(c)}" for b, c in enumerate(self.counts)]
        return "\n".join(lines) + "\n"


def quantize(residual_map, scale: float = 1.0) -> np.ndarray:
    """Floor to nonnegative integers, so ``r * scale < T`` iff ``q < T`` for integer ``T``."""
    q = np.floor(np.asarray(residual_map, dtype=float) * scale)
    return np.maximum(q, 0).astype(np.int64)


def build_histogram(q) -> ThresholdHistogram:
    q = np.asarray(q)
    if q.ndim != 2:
        raise ValueError("residual map must be 2-D")
    if q.size and q.min() < 0:
        raise ValueError("residual map must be nonnegative")
    n_bins = int(q.max()) + 1 if q.size else 1
    if q.shape[0] < 3 or q.shape[1] < 3:
        return ThresholdHistogram(np.zeros(n_bins, dtype=np.int64))
    hood = sliding_window_view(q, (3, 3)).reshape(-1, 9)
    top = np.sort(hood, axis=1)[:, -3:]
    centre = q[1:-1, 1:-1].ravel()
    v1, v3 = top[:, 2], top[:, 0]
    votes = (centre == v1) & (v3 < v1)
    first, last = v3[votes] + 1, v1[votes]
    diff = np.bincount(first, minlength=n_bins + 1) - np.bincount(last + 1, minlength=n_bins + 1)
    return ThresholdHistogram(np.cumsum(diff)[:n_bins].astype(np.int64))


def mode_region(counts) -> tuple[int, int] | None:
    """Least-width run of bins holding at least half the mass; leftmost on ties."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return None
    cum = np.concatenate(([0], np.cumsum(counts)))
    need = (total + 1) // 2
    ends = np.searchsorted(cum, cum[:-1] + need, side="left")
    ok = ends < cum.size
    starts = np.nonzero(ok)[0]
    widths = ends[ok] - 1 - starts
    k = int(np.argmin(widths))
    return int(starts[k]), int(starts[k] + widths[k])


def choose_threshold(h: ThresholdHistogram, fraction: float = 0.0025,
                     n_pixels: int | None = None) -> int | None:
    """Threshold bin, or ``None`` when the histogram is empty.

    Records the mode region and the choice on ``h``.
    """
    region = mode_region(h.counts)
    h.mode_region = region
    if region is None:
        h.chosen_threshold = None
        return None
    limit = fraction * (n_pixels if n_pixels is not None else h.total)
    tail = h.counts[region[1] + 1:]
    below = np.nonzero(tail < limit)[0]
    threshold = region[1] + 1 + (int(below[0]) if below.size else tail.size)
    h.chosen_threshold = threshold
    return threshold


def detect_events(residual_map, fraction: float = 0.0025, scale: float = 1.0):
    """Return ``(EventMask, ThresholdHistogram)`` for one 2-D residual map.

    Pixels with quantised residual below the threshold are marked True
    (consistent with the model).  Without a threshold every pixel is True.
    """
    q = quantize(residual_map, scale)
    h = build_histogram(q)
    threshold = choose_threshold(h, fraction, q.size)
    y = np.ones(q.shape, dtype=bool) if threshold is None else q < threshold
    return EventMask(y=y.ravel(), threshold=threshold), h
