"""Benchmark configuration: schema, validation, and shipped defaults.

Config files are JSON with this shape (optional keys marked ?):

    {
      "tasks": [
        {"name": "conll2003", "metric_kind": "entity_f1", "cutoff": 91.0,
         "epoch_budget"?: 5, "train_size"?: 14041, "dev_size"?: 3250}
      ],
      "hardware"?: {"kind": "gpu_v100", "unit_count": 1,
                    "unit_price_per_hour": 3.06, "chips_per_unit"?: 1},
      "reference_model": "BERT_LARGE",
      "reference_baseline"?: {
        "finetune":  {"<task>": {"seconds": 90.26, "cost_usd"?: 0.08}},
        "inference": {"<task>": {"seconds": 8.51}}
      },
      "eval_interval_seconds"?: 10.0,
      "seed"?: 0,
      "idle_timeout_seconds"?: 300.0,
      "instance_count"?: 1000,
      "cost_time_basis"?: "metered",        // or "wall"
      "clock"?: "monotonic"                 // or "simulated"
    }

Inference baseline "seconds" entries hold per-instance latency in
milliseconds (the inference tables' native unit). `EFFBENCH_SEED` in the
environment overrides the configured seed at run time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from .errors import ConfigError, UsageError
from .scoring import ReferenceBaseline, ReferenceEntry
from .types import (
    DEFAULT_EPOCH_BUDGET,
    HardwareKind,
    HardwareProfile,
    MetricKind,
    Phase,
    TaskSpec,
)

SEED_ENV_VAR = "EFFBENCH_SEED"

COST_TIME_BASES = ("metered", "wall")
CLOCK_MODES = ("monotonic", "simulated")


@dataclass(frozen=True)
class BenchmarkConfig:
    tasks: Tuple[TaskSpec, ...]
    reference_model: str
    hardware: Optional[HardwareProfile] = None
    reference_baseline: Mapping[Phase, ReferenceBaseline] = field(default_factory=dict)
    eval_interval_seconds: float = 10.0
    seed: int = 0
    idle_timeout_seconds: float = 300.0
    instance_count: int = 1000
    cost_time_basis: str = "metered"
    clock: str = "monotonic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "reference_baseline", dict(self.reference_baseline))
        if not self.tasks:
            raise UsageError("no tasks")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate task names: {names}")
        if not self.reference_model:
            raise UsageError("reference_model must be nonempty")
        if self.eval_interval_seconds <= 0:
            raise UsageError("eval_interval_seconds must be positive")
        if self.idle_timeout_seconds <= 0:
            raise UsageError("idle_timeout_seconds must be positive")
        if self.instance_count < 1:
            raise UsageError("instance_count must be >= 1")
        if self.cost_time_basis not in COST_TIME_BASES:
            raise UsageError(f"cost_time_basis must be one of {COST_TIME_BASES}")
        if self.clock not in CLOCK_MODES:
            raise UsageError(f"clock must be one of {CLOCK_MODES}")
        for phase, baseline in self.reference_baseline.items():
            baseline.require_tasks(names)

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise UsageError(f"unknown task: {name}")

    @property
    def task_names(self) -> Tuple[str, ...]:
        return tuple(t.name for t in self.tasks)


def effective_seed(config: BenchmarkConfig) -> int:
    """Config seed, unless EFFBENCH_SEED is set in the environment."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return config.seed
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}")


# ---------------------------------------------------------------------------
# parsing


def _require(obj: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise ConfigError(f"{path}.{key}: required field is missing")
    return obj[key]


def _typed(value: Any, kind: type | tuple, path: str) -> Any:
    expected = "number" if kind is float else kind.__name__
    if kind is float:
        kind = (int, float)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected {expected}, got {type(value).__name__}")
    return value


def parse_task_spec(obj: Any, path: str = "task") -> TaskSpec:
    return _parse_task(obj, path)


def _parse_task(obj: Any, path: str) -> TaskSpec:
    _typed(obj, dict, path)
    kind_raw = _typed(_require(obj, "metric_kind", path), str, f"{path}.metric_kind")
    try:
        kind = MetricKind(kind_raw)
    except ValueError:
        raise ConfigError(
            f"{path}.metric_kind: unknown metric kind {kind_raw!r} "
            f"(expected one of {[k.value for k in MetricKind]})"
        )
    try:
        return TaskSpec(
            name=_typed(_require(obj, "name", path), str, f"{path}.name"),
            metric_kind=kind,
            cutoff=float(_typed(_require(obj, "cutoff", path), float, f"{path}.cutoff")),
            epoch_budget=_typed(
                obj.get("epoch_budget", DEFAULT_EPOCH_BUDGET), int, f"{path}.epoch_budget"
            ),
            train_size=_typed(obj.get("train_size", 0), int, f"{path}.train_size"),
            dev_size=_typed(obj.get("dev_size", 0), int, f"{path}.dev_size"),
        )
    except UsageError as e:
        raise ConfigError(f"{path}: {e}")


def _parse_hardware(obj: Any, path: str) -> HardwareProfile:
    _typed(obj, dict, path)
    kind_raw = _typed(_require(obj, "kind", path), str, f"{path}.kind")
    try:
        kind = HardwareKind(kind_raw)
    except ValueError:
        raise ConfigError(
            f"{path}.kind: unknown hardware kind {kind_raw!r} "
            f"(expected one of {[k.value for k in HardwareKind]})"
        )
    try:
        return HardwareProfile(
            kind=kind,
            unit_count=_typed(_require(obj, "unit_count", path), int, f"{path}.unit_count"),
            unit_price_per_hour=float(
                _typed(
                    _require(obj, "unit_price_per_hour", path),
                    float,
                    f"{path}.unit_price_per_hour",
                )
            ),
            chips_per_unit=_typed(obj.get("chips_per_unit", 1), int, f"{path}.chips_per_unit"),
        )
    except UsageError as e:
        raise ConfigError(f"{path}: {e}")


def _parse_baselines(obj: Any, reference_model: str, path: str) -> Dict[Phase, ReferenceBaseline]:
    _typed(obj, dict, path)
    baselines: Dict[Phase, ReferenceBaseline] = {}
    for phase_raw, entries in obj.items():
        try:
            phase = Phase(phase_raw)
        except ValueError:
            raise ConfigError(f"{path}.{phase_raw}: unknown phase")
        _typed(entries, dict, f"{path}.{phase_raw}")
        per_task: Dict[str, ReferenceEntry] = {}
        for task_name, entry in entries.items():
            epath = f"{path}.{phase_raw}.{task_name}"
            _typed(entry, dict, epath)
            cost = entry.get("cost_usd")
            if cost is not None:
                cost = float(_typed(cost, float, f"{epath}.cost_usd"))
            try:
                per_task[task_name] = ReferenceEntry(
                    reference_seconds=float(
                        _typed(_require(entry, "seconds", epath), float, f"{epath}.seconds")
                    ),
                    reference_cost_usd=cost,
                )
            except UsageError as e:
                raise ConfigError(f"{epath}: {e}")
        baselines[phase] = ReferenceBaseline(model_name=reference_model, per_task=per_task)
    return baselines


def parse_config(data: Any) -> BenchmarkConfig:
    """Build a validated BenchmarkConfig from a parsed JSON tree."""
    _typed(data, dict, "config")
    tasks_raw = _typed(_require(data, "tasks", "config"), list, "config.tasks")
    tasks = tuple(_parse_task(t, f"config.tasks[{i}]") for i, t in enumerate(tasks_raw))
    reference_model = _typed(
        _require(data, "reference_model", "config"), str, "config.reference_model"
    )
    hardware = None
    if data.get("hardware") is not None:
        hardware = _parse_hardware(data["hardware"], "config.hardware")
    baselines: Dict[Phase, ReferenceBaseline] = {}
    if data.get("reference_baseline") is not None:
        baselines = _parse_baselines(
            data["reference_baseline"], reference_model, "config.reference_baseline"
        )
    try:
        return BenchmarkConfig(
            tasks=tasks,
            reference_model=reference_model,
            hardware=hardware,
            reference_baseline=baselines,
            eval_interval_seconds=float(
                _typed(
                    data.get("eval_interval_seconds", 10.0),
                    float,
                    "config.eval_interval_seconds",
                )
            ),
            seed=_typed(data.get("seed", 0), int, "config.seed"),
            idle_timeout_seconds=float(
                _typed(
                    data.get("idle_timeout_seconds", 300.0),
                    float,
                    "config.idle_timeout_seconds",
                )
            ),
            instance_count=_typed(data.get("instance_count", 1000), int, "config.instance_count"),
            cost_time_basis=_typed(
                data.get("cost_time_basis", "metered"), str, "config.cost_time_basis"
            ),
            clock=_typed(data.get("clock", "monotonic"), str, "config.clock"),
        )
    except UsageError as e:
        raise ConfigError(str(e))


def load_config(path: str | Path) -> BenchmarkConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    return parse_config(data)


# ---------------------------------------------------------------------------
# serialization (round-trips through parse_config)


def serialize_config(config: BenchmarkConfig) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "tasks": [
            {
                "name": t.name,
                "metric_kind": t.metric_kind.value,
                "cutoff": t.cutoff,
                "epoch_budget": t.epoch_budget,
                "train_size": t.train_size,
                "dev_size": t.dev_size,
            }
            for t in config.tasks
        ],
        "reference_model": config.reference_model,
        "eval_interval_seconds": config.eval_interval_seconds,
        "seed": config.seed,
        "idle_timeout_seconds": config.idle_timeout_seconds,
        "instance_count": config.instance_count,
        "cost_time_basis": config.cost_time_basis,
        "clock": config.clock,
    }
    if config.hardware is not None:
        data["hardware"] = {
            "kind": config.hardware.kind.value,
            "unit_count": config.hardware.unit_count,
            "unit_price_per_hour": config.hardware.unit_price_per_hour,
            "chips_per_unit": config.hardware.chips_per_unit,
        }
    if config.reference_baseline:
        data["reference_baseline"] = {
            phase.value: {
                task: (
                    {"seconds": entry.reference_seconds}
                    if entry.reference_cost_usd is None
                    else {"seconds": entry.reference_seconds, "cost_usd": entry.reference_cost_usd}
                )
                for task, entry in baseline.per_task.items()
            }
            for phase, baseline in config.reference_baseline.items()
        }
    return data


def dump_config(config: BenchmarkConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(serialize_config(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# shipped defaults


def _data_text(name: str) -> str:
    return resources.files("effbench.data").joinpath(name).read_text(encoding="utf-8")


def default_config() -> BenchmarkConfig:
    """The shipped three-task benchmark definition with its reference baselines."""
    return parse_config(json.loads(_data_text("default_config.json")))


def load_pretraining_costs() -> list:
    """Reported pretraining cost table; rows with source="computed" are
    reproducible from the cost model, "reported" rows use an undocumented
    billing unit and are stored as literals."""
    return json.loads(_data_text("pretraining_costs.json"))
