"""Streaming pursuit of time-varying low-rank models under uniform and sparse noise."""
from .bench import (
    MaskMetrics,
    SyntheticFrame,
    SyntheticSpec,
    brute_force_complete,
    generate_stream,
    iter_stream,
    score_masks,
)
from .completion import SweepPlan, SweepStats, complete, curvature, plan_sweep, step_L, step_R, sweep
from .detection import ThresholdHistogram, build_histogram, choose_threshold, detect_events
from .model import (
    ContractError,
    EventMask,
    FactorPair,
    FrameVector,
    ObservationWindow,
    ProjectionNorm,
    PursuitConfig,
    feasibility,
    objective_gradient,
    objective_value,
)
from .projection import DegenerateSubspaceError, ProjectionResult, project, residuals
from .pursuit import PursuitSession, StepMetrics

__version__ = "0.1.0"
