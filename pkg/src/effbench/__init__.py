"""Multi-phase energy-efficiency benchmark harness.

Meters the time and monetary cost for trainer processes to reach
task-specific cutoff performance, computes normalized multi-task efficiency
scores against a reference model, and produces validated leaderboards.
Deterministic simulated trainers make every behavior testable without GPUs.
"""

from .config import BenchmarkConfig, default_config, load_config
from .cutoff import budget_exhausted, detect_crossing, smooth
from .errors import BenchmarkError, ConfigError, ProtocolError, UsageError
from .metering import FakeClock, MonotonicClock, PhaseTimer, compute_cost, start_phase
from .metrics import accuracy, entity_f1, extract_spans, mnli_avg_accuracy
from .orchestrator import RunBundle, inference_benchmark, run_benchmark
from .protocol import Session, TrainerEvent, parse_event
from .scoring import ReferenceBaseline, build_scorecard, overall_score, task_score
from .simtrainer import CurveParams, PretrainSimParams, curve_value, run_sim_pretrain
from .types import (
    HardwareProfile,
    MeasurementSeries,
    MetricKind,
    Phase,
    PhaseResult,
    RunStatus,
    ScoreBasis,
    ScoreCard,
    TaskSpec,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "BenchmarkError",
    "ConfigError",
    "CurveParams",
    "FakeClock",
    "HardwareProfile",
    "MeasurementSeries",
    "MetricKind",
    "MonotonicClock",
    "Phase",
    "PhaseResult",
    "PhaseTimer",
    "PretrainSimParams",
    "ProtocolError",
    "ReferenceBaseline",
    "RunBundle",
    "RunStatus",
    "ScoreBasis",
    "ScoreCard",
    "Session",
    "TaskSpec",
    "TrainerEvent",
    "UsageError",
    "accuracy",
    "budget_exhausted",
    "build_scorecard",
    "compute_cost",
    "curve_value",
    "default_config",
    "detect_crossing",
    "entity_f1",
    "extract_spans",
    "inference_benchmark",
    "load_config",
    "mnli_avg_accuracy",
    "overall_score",
    "parse_event",
    "run_benchmark",
    "run_sim_pretrain",
    "smooth",
    "start_phase",
    "task_score",
]
