"""Streaming session: project, detect, roll the window, complete.

Each frame is projected onto the current subspace from a subsample of its
sensors, per-sensor residuals are thresholded into an event mask, the frame
enters the window with events marked absent, and the factors get a warm
started completion budget.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .completion import SweepStats, complete, init_factors
from .detection import ThresholdHistogram, detect_events
from .model import (
    ContractError,
    EventMask,
    FrameVector,
    ObservationWindow,
    PursuitConfig,
)
from .projection import DegenerateSubspaceError, ProjectionResult, project, residuals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepMetrics:
    frame_index: int
    objective: float
    feasibility: float
    step_ms: float
    threshold: int | None = None
    n_events: int = 0


def _frame_shape(n_sensors: int, frame_shape) -> tuple[int, int]:
    if frame_shape is not None:
        h, w = (int(v) for v in frame_shape)
        if h * w != n_sensors:
            raise ContractError(f"frame shape {h}x{w} does not cover {n_sensors} sensors")
        return h, w
    side = math.isqrt(n_sensors)
    if side * side == n_sensors:
        return side, side
    log.warning("no frame shape given for %d sensors; treating the frame as one row", n_sensors)
    return 1, n_sensors


def _as_vector(x, n_cols: int) -> np.ndarray:
    if isinstance(x, FrameVector):
        x = x.x
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != n_cols:
        raise ContractError(f"frame has {x.size} entries, session expects {n_cols}")
    return x


class PursuitSession:
    """One logical stream.  Not reentrant."""

    def __init__(self, cfg: PursuitConfig, n_cols: int, value_range: tuple[float, float],
                 sensor_size: int = 1, frame_shape=None):
        if n_cols < 1 or n_cols % sensor_size:
            raise ContractError(f"{n_cols} entries do not split into sensors of size {sensor_size}")
        self.cfg = cfg
        self.sensor_size = int(sensor_size)
        self.frame_shape = _frame_shape(n_cols // sensor_size, frame_shape)
        self.window = ObservationWindow(n_cols, cfg.window_len, cfg.delta, value_range)
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.factors = init_factors(0, cfg.rank, n_cols, self.rng)
        self.frame_index = 0
        self.history: list[StepMetrics] = []
        self.sweeps: list[SweepStats] | None = None
        self.last_projection: ProjectionResult | None = None
        self.last_residuals: np.ndarray | None = None
        self.last_histogram: ThresholdHistogram | None = None

    @classmethod
    def init(cls, cfg: PursuitConfig, warmup_frames, sensor_size: int = 1,
             frame_shape=None) -> "PursuitSession":
        """Warm up on ``warmup_frames`` (all entries present).

        Each pass streams the frames through the window with one completion
        sweep per frame; ``cfg.warmup_passes`` passes are run.  With fewer
        frames than the window holds, passes after the first sweep in place.
        """
        frames = [np.asarray(f.x if isinstance(f, FrameVector) else f, dtype=float).reshape(-1)
                  for f in warmup_frames]
        if not frames:
            raise ContractError("warm-up needs at least one frame")
        n_cols = frames[0].size
        if any(f.size != n_cols for f in frames):
            raise ContractError("warm-up frames differ in length")
        if cfg.value_range is not None:
            value_range = cfg.value_range
        else:
            stacked = np.concatenate(frames)
            value_range = (float(stacked.min()) - cfg.delta, float(stacked.max()) + cfg.delta)
        session = cls(cfg, n_cols, value_range, sensor_size, frame_shape)
        # replaying a short warm-up set would put duplicate rows in the window,
        # so later passes then only sweep
        replay = len(frames) >= cfg.window_len
        for p in range(max(cfg.warmup_passes, 1)):
            for x in frames:
                if p == 0 or replay:
                    session._append(x, None, session._seed_row(x))
                if cfg.warmup_passes:
                    complete(session.factors, session.window, cfg, 1, rng=session.rng, inplace=True)
        return session

    @property
    def n_cols(self) -> int:
        return self.window.n_cols

    def _seed_row(self, x: np.ndarray) -> np.ndarray:
        R = self.factors.R
        G = R @ R.T
        G[np.diag_indices_from(G)] += self.cfg.reg_weight
        return np.linalg.solve(G, R @ x)

    def _append(self, x: np.ndarray, present, v: np.ndarray) -> None:
        f = self.factors
        evicted = self.window.push(x, present)
        a_row = v @ f.R
        if evicted:
            f.L[:-1] = f.L[1:]
            f.A[:-1] = f.A[1:]
            f.L[-1] = v
            f.A[-1] = a_row
        else:
            f.L = np.vstack([f.L, v])
            f.A = np.vstack([f.A, a_row])

    def _project(self, x: np.ndarray) -> ProjectionResult:
        cfg = self.cfg
        args = dict(norm=cfg.projection_norm, period=cfg.subsample_period, rng=self.rng,
                    sensor_size=self.sensor_size)
        state = self.rng.bit_generator.state
        try:
            return project(x, self.factors.R, **args)
        except DegenerateSubspaceError:
            log.debug("degenerate subspace at frame %d; using ridge projection", self.frame_index)
            self.rng.bit_generator.state = state
            return project(x, self.factors.R, ridge=cfg.reg_weight, **args)

    def detect(self, x) -> tuple[EventMask, ProjectionResult, np.ndarray, ThresholdHistogram]:
        """Mask for ``x`` against the current subspace, without changing the factors."""
        x = _as_vector(x, self.n_cols)
        proj = self._project(x)
        res = residuals(x, proj.v, self.factors.R, self.sensor_size)
        mask, hist = detect_events(res.reshape(self.frame_shape), self.cfg.threshold_fraction,
                                   self.cfg.residual_scale)
        return mask, proj, res, hist

    def step(self, x, deadline: float | None = None) -> EventMask:
        """Process one frame and return its mask (True = consistent with the model).

        ``deadline`` switches to wall-clock mode: completion keeps sweeping
        until ``time.perf_counter()`` passes it.
        """
        t0 = time.perf_counter()
        x = _as_vector(x, self.n_cols)
        mask, proj, res, hist = self.detect(x)
        present = mask.y if self.sensor_size == 1 else np.repeat(mask.y, self.sensor_size)
        self._append(x, present, proj.v)
        complete(self.factors, self.window, self.cfg, self.cfg.epochs_per_update, rng=self.rng,
                 inplace=True, deadline=deadline, history=self.sweeps)
        objective, feasible = self._summary()
        elapsed = (time.perf_counter() - t0) * 1e3
        self.frame_index += 1
        self.last_projection, self.last_residuals, self.last_histogram = proj, res, hist
        self.history.append(StepMetrics(
            frame_index=self.frame_index,
            objective=objective,
            feasibility=feasible,
            step_ms=elapsed,
            threshold=mask.threshold,
            n_events=mask.n_events,
        ))
        return mask

    def _summary(self) -> tuple[float, float]:
        # objective_value and feasibility in one compiled pass
        f, w = self.factors, self.window
        sq, inside, n_present = _kernels.hinge_terms(f.A, w.lower, w.upper, w.present)
        reg = 0.5 * self.cfg.reg_weight * (np.vdot(f.L, f.L) + np.vdot(f.R, f.R))
        return float(0.5 * sq + reg), (inside / n_present if n_present else 1.0)

    def track_metrics(self) -> StepMetrics:
        """Latest per-step record; before any step, a snapshot of the warm-up state."""
        if self.history:
            return self.history[-1]
        objective, feasible = self._summary()
        return StepMetrics(frame_index=0, objective=objective, feasibility=feasible, step_ms=0.0)

    def step_times(self) -> np.ndarray:
        return np.array([m.step_ms for m in self.history]) / 1e3
