"""Core data types and the interval-constrained completion objective.

The observation window stacks the most recent frames as rows.  Every entry
carries an interval ``[lower, upper]``: ``M - delta .. M + delta`` where the
entry was observed, and the natural data range where it is absent.  The
objective penalises products ``A = L @ R`` that leave their interval with a
squared hinge, plus Frobenius regularisation of both factors.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np


class ContractError(ValueError):
    """Raised on dimension mismatches and other violated preconditions."""


class ProjectionNorm(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    GEMAN_MCLURE = "geman-mcclure"

    @classmethod
    def parse(cls, value: "str | ProjectionNorm") -> "ProjectionNorm":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"1": "l1", "2": "l2", "gm": "geman-mcclure", "geman-mclure": "geman-mcclure",
                   "gemanmcclure": "geman-mcclure", "gemanmclure": "geman-mcclure"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ContractError(f"unknown projection norm {value!r}") from None


@dataclass(frozen=True)
class PursuitConfig:
    """All tunables of a pursuit session.

    ``window_len`` is the number of frames held in the window, ``delta`` the
    half-width of the uniform measurement noise and ``reg_weight`` the
    Frobenius weight of both factors.  ``value_range`` bounds entries that are
    absent from the window; ``None`` infers it from the warm-up frames.
    """

    window_len: int = 35
    rank: int = 4
    delta: float = 5.0
    reg_weight: float = 0.1
    epochs_per_update: int = 1
    projection_norm: ProjectionNorm = ProjectionNorm.L1
    subsample_period: int = 100
    threshold_fraction: float = 0.0025
    backtracking: bool = True
    rng_seed: int = 0
    warmup_passes: int = 3
    value_range: tuple[float, float] | None = None
    residual_scale: float = 1.0
    max_halvings: int = 20

    def __post_init__(self):
        object.__setattr__(self, "projection_norm", ProjectionNorm.parse(self.projection_norm))
        if self.value_range is not None:
            lo, hi = (float(v) for v in self.value_range)
            object.__setattr__(self, "value_range", (lo, hi))
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ContractError(f"value_range must be finite with lo <= hi, got {self.value_range}")
        if not (self.window_len >= self.rank >= 1):
            raise ContractError(f"need window_len >= rank >= 1, got T={self.window_len}, r={self.rank}")
        if self.delta < 0:
            raise ContractError("delta must be nonnegative")
        if self.reg_weight <= 0:
            raise ContractError("reg_weight must be positive")
        if self.epochs_per_update < 1 or self.warmup_passes < 0:
            raise ContractError("epochs_per_update must be >= 1 and warmup_passes >= 0")
        if self.subsample_period < 1:
            raise ContractError("subsample_period must be >= 1")
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ContractError("threshold_fraction must lie in (0, 1)")
        if self.residual_scale <= 0:
            raise ContractError("residual_scale must be positive")

    def replace(self, **changes: Any) -> "PursuitConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PursuitConfig":
        """Build a config from string-valued key/value pairs (config files, CLI)."""
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in names:
                raise ContractError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(name, raw)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ProjectionNorm):
                value = value.value
            elif isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            out[f.name] = str(value)
        return out


_INT_FIELDS = {"window_len", "rank", "epochs_per_update", "subsample_period", "rng_seed",
               "warmup_passes", "max_halvings"}
_FLOAT_FIELDS = {"delta", "reg_weight", "threshold_fraction", "residual_scale"}


def _coerce(name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    if name == "backtracking":
        lowered = text.lower()
        if lowered in {"1", "true", "yes", "on"}:
            return True
        if lowered in {"0", "false", "no", "off"}:
            return False
        raise ContractError(f"cannot parse boolean {raw!r}")
    if name == "value_range":
        if text.lower() in {"", "none", "auto"}:
            return None
        parts = text.replace(":", ",").split(",")
        if len(parts) != 2:
            raise ContractError(f"value_range needs two numbers, got {raw!r}")
        return (float(parts[0]), float(parts[1]))
    return text


class ObservationWindow:
    """Sliding stack of the most recent (at most ``capacity``) frames.

    Rows are chronological: row 0 is the oldest live frame.  ``lower`` and
    ``upper`` are materialised so the solver never has to branch on presence.
    """

    def __init__(self, n_cols: int, capacity: int, delta: float,
                 value_range: tuple[float, float]):
        lo, hi = value_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ContractError("global bounds must be finite with lo <= hi")
        self.capacity = int(capacity)
        self.delta = float(delta)
        self.global_bounds = (float(lo), float(hi))
        self._data = np.zeros((capacity, n_cols))
        self._present = np.zeros((capacity, n_cols), dtype=bool)
        self._lower = np.full((capacity, n_cols), float(lo))
        self._upper = np.full((capacity, n_cols), float(hi))
        self.rows = 0
        self._transposed = None

    @classmethod
    def from_matrix(cls, M, delta: float, present=None,
                    value_range: tuple[float, float] | None = None) -> "ObservationWindow":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2:
            raise ContractError("observation matrix must be 2-D")
        present = np.ones(M.shape, dtype=bool) if present is None else np.asarray(present, dtype=bool)
        if present.shape != M.shape:
            raise ContractError("presence mask shape differs from data")
        if value_range is None:
            seen = M[present]
            value_range = (float(seen.min()) - delta, float(seen.max()) + delta) if seen.size else (0.0, 0.0)
        w = cls(M.shape[1], M.shape[0], delta, value_range)
        for row, mask in zip(M, present):
            w.push(row, mask)
        return w

    @property
    def n_cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.n_cols)

    @property
    def data(self) -> np.ndarray:
        return self._data[: self.rows]

    @property
    def present(self) -> np.ndarray:
        return self._present[: self.rows]

    @property
    def lower(self) -> np.ndarray:
        return self._lower[: self.rows]

    @property
    def upper(self) -> np.ndarray:
        return self._upper[: self.rows]

    def push(self, x, present=None) -> bool:
        """Append ``x`` as the newest row; returns True if the oldest row was evicted."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_cols:
            raise ContractError(f"frame has {x.size} entries, window expects {self.n_cols}")
        present = np.ones(x.size, dtype=bool) if present is None else np.asarray(present, dtype=bool).reshape(-1)
        if present.size != x.size:
            raise ContractError("presence mask length differs from frame")
        evicted = self.rows == self.capacity
        if evicted:
            for buf in (self._data, self._present, self._lower, self._upper):
                buf[:-1] = buf[1:]
            k = self.capacity - 1
        else:
            k = self.rows
            self.rows += 1
        lo, hi = self.global_bounds
        self._data[k] = np.where(present, x, 0.0)
        self._present[k] = present
        self._lower[k] = np.where(present, x - self.delta, lo)
        self._upper[k] = np.where(present, x + self.delta, hi)
        self._transposed = None
        return evicted

    def transposed_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """C-contiguous ``(lower.T, upper.T)``, cached until the next push."""
        if self._transposed is None:
            self._transposed = (np.ascontiguousarray(self.lower.T), np.ascontiguousarray(self.upper.T))
        return self._transposed

    def copy(self) -> "ObservationWindow":
        other = ObservationWindow.__new__(ObservationWindow)
        other.__dict__.update(self.__dict__)
        for name in ("_data", "_present", "_lower", "_upper"):
            setattr(other, name, getattr(self, name).copy())
        other._transposed = None
        return other


@dataclass
class FactorPair:
    """Factors ``L`` (rows x r), ``R`` (r x cols) and the cached product ``A``."""

    L: np.ndarray
    R: np.ndarray
    A: np.ndarray = field(default=None)

    def __post_init__(self):
        self.L = np.ascontiguousarray(self.L, dtype=float)
        self.R = np.ascontiguousarray(self.R, dtype=float)
        if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[0]:
            raise ContractError(f"incompatible factor shapes {self.L.shape} and {self.R.shape}")
        if self.A is None:
            self.A = self.L @ self.R
        else:
            self.A = np.ascontiguousarray(self.A, dtype=float)
            if self.A.shape != (self.L.shape[0], self.R.shape[1]):
                raise ContractError("cached product has the wrong shape")

    @classmethod
    def zeros(cls, rows: int, rank: int, cols: int) -> "FactorPair":
        return cls(np.zeros((rows, rank)), np.zeros((rank, cols)))

    @property
    def rank(self) -> int:
        return self.R.shape[0]

    def copy(self) -> "FactorPair":
        return FactorPair(self.L.copy(), self.R.copy(), self.A.copy())

    def cache_error(self) -> float:
        """Max-norm drift of the cache, relative to ``1 + |A|_max``."""
        if self.A.size == 0:
            return 0.0
        err = np.abs(self.A - self.L @ self.R).max()
        return float(err / (1.0 + np.abs(self.A).max()))

    def refresh(self) -> None:
        self.A = self.L @ self.R


@dataclass(frozen=True)
class FrameVector:
    """One flattened frame: ``N`` sensors with ``n`` entries each."""

    x: np.ndarray
    n: int = 1

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        object.__setattr__(self, "x", x)
        if self.n < 1 or x.size % self.n:
            raise ContractError(f"frame length {x.size} is not a multiple of sensor size {self.n}")

    @property
    def N(self) -> int:
        return self.x.size // self.n


@dataclass(frozen=True)
class EventMask:
    """Per-sensor verdict for one frame; True means consistent with the model."""

    y: np.ndarray
    threshold: int | None = None

    @property
    def events(self) -> np.ndarray:
        return ~self.y

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(~self.y))


def _check(f: FactorPair, w: ObservationWindow) -> None:
    if f.A.shape != w.shape:
        raise ContractError(f"factors describe {f.A.shape}, window is {w.shape}")


def hinge_residual(A, lower, upper) -> np.ndarray:
    """Signed interval violation: ``A - lower`` below, ``A - upper`` above, else 0."""
    return np.minimum(A - lower, 0.0) + np.maximum(A - upper, 0.0)


def objective_value(f: FactorPair, w: ObservationWindow, nu: float) -> float:
    _check(f, w)
    d = hinge_residual(f.A, w.lower, w.upper)
    return float(0.5 * np.vdot(d, d) + 0.5 * nu * (np.vdot(f.L, f.L) + np.vdot(f.R, f.R)))


def objective_gradient(f: FactorPair, w: ObservationWindow, nu: float) -> tuple[np.ndarray, np.ndarray]:
    """Partial gradients with respect to ``L`` and ``R``."""
    _check(f, w)
    d = hinge_residual(f.A, w.lower, w.upper)
    return nu * f.L + d @ f.R.T, nu * f.R + f.L.T @ d


def feasibility(f: FactorPair, w: ObservationWindow, present_only: bool = True) -> float:
    """Share of entries whose product lies inside its interval."""
    _check(f, w)
    inside = (f.A >= w.lower) & (f.A <= w.upper)
    if present_only:
        n = np.count_nonzero(w.present)
        return float(np.count_nonzero(inside & w.present) / n) if n else 1.0
    return float(inside.mean()) if inside.size else 1.0
