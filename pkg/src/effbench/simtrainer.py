"""Deterministic simulated trainers.

A sim trainer speaks the full wire protocol from a parametric
saturating-exponential learning curve, so every phase of the harness can be
exercised end to end in milliseconds, with closed-form crossing times for
oracle tests. Simulated time is decoupled from real time: every event
carries ``sim_elapsed`` (simulated wall seconds) and the process sleeps
``sim_speedup`` times faster than the timeline it reports.

The curve is m_inf * (1 - exp(-t / tau)) plus optional seeded noise, with t
measured in simulated *training* seconds (evaluation pauses excluded), so a
cutoff c < m_inf is first exceeded at t* = -tau * ln(1 - c / m_inf).

Params file (JSON):

    {
      "model_name": "curvebot",
      "task": {"name": ..., "metric_kind": ..., "cutoff": ..., ...},
      "curve": {"m_inf": 95.0, "tau": 100.0, "noise_sigma": 0.0,
                "seed": 7, "sim_speedup": 1000000.0},
      "seconds_per_epoch": 100.0,
      "eval_interval_seconds"?: 10.0,
      "eval_duration_seconds"?: 1.0,
      "predictions_dir"?: "/where/to/write/dev/output",
      "params_millions"?: 42.0,
      "inference"?: {"per_instance_ms": 2.68, "instance_count"?: 1000},
      "pretrain"?: {"r_inf": 0.97, "s_half": 40.0,
                    "checkpoint_interval_steps"?: 1000,
                    "seconds_per_epoch"?: 100.0, "step_seconds"?: 0.5,
                    "max_steps"?: 20000},
      "fault"?: {"kind": "garbage_line"|"unknown_event"|"die",
                 "after_evals": 2}
    }
"""

from __future__ import annotations

import json
import math
import os
import random
import select
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from . import metrics
from .config import parse_task_spec
from .cutoff import detect_crossing
from .errors import ConfigError, UsageError
from .protocol import ABORT_COMMAND, BEGIN_COMMAND, DoneReason, encode_event
from .types import MeasurementPoint, MeasurementSeries, MetricKind, Phase, RunStatus, TaskSpec


@dataclass(frozen=True)
class CurveParams:
    """Saturating-exponential learning curve on the metric's native scale."""

    m_inf: float
    tau: float
    noise_sigma: float = 0.0
    seed: int = 0
    sim_speedup: float = 1_000_000.0

    def __post_init__(self) -> None:
        if not (0.0 < self.m_inf <= 100.0):
            raise UsageError(f"m_inf must be in (0, 100], got {self.m_inf!r}")
        if self.tau <= 0:
            raise UsageError(f"tau must be positive, got {self.tau!r}")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be nonnegative")
        if self.sim_speedup < 1:
            raise UsageError("sim_speedup must be >= 1")

    def scaled(self, factor: float, seed_offset: int = 0) -> "CurveParams":
        return CurveParams(
            m_inf=self.m_inf * factor,
            tau=self.tau,
            noise_sigma=self.noise_sigma,
            seed=self.seed + seed_offset,
            sim_speedup=self.sim_speedup,
        )


def curve_value(params: CurveParams, t: float) -> float:
    """Metric value after t simulated training seconds; reproducible in t."""
    if t < 0:
        raise UsageError("t must be nonnegative")
    base = params.m_inf * (1.0 - math.exp(-t / params.tau))
    if params.noise_sigma == 0.0:
        return base
    # string seeding hashes with sha512, so the noise stream is stable
    # across processes and interpreter versions
    noise = random.Random(f"{params.seed}:{t!r}").gauss(0.0, params.noise_sigma)
    return min(100.0, max(0.0, base + noise))


def analytic_crossing_time(params: CurveParams, cutoff: float) -> Optional[float]:
    """Closed-form first time the noise-free curve reaches ``cutoff``."""
    if cutoff >= params.m_inf:
        return None
    return -params.tau * math.log(1.0 - cutoff / params.m_inf)


@dataclass(frozen=True)
class PretrainSimParams:
    """Checkpoint-clone-finetune simulation: readiness of the half-pretrained
    model after s steps is r_inf * s / (s + s_half), and a checkpoint's
    fine-tune fork runs the template curve with m_inf scaled by it."""

    r_inf: float
    s_half: float
    finetune_curve: CurveParams
    checkpoint_interval_steps: int = 1000
    seconds_per_epoch: float = 100.0
    step_seconds: float = 0.5
    max_steps: int = 20000

    def __post_init__(self) -> None:
        if not (0.0 < self.r_inf <= 1.0):
            raise UsageError(f"r_inf must be in (0, 1], got {self.r_inf!r}")
        if self.s_half <= 0:
            raise UsageError("s_half must be positive")
        if self.checkpoint_interval_steps < 1:
            raise UsageError("checkpoint_interval_steps must be >= 1")
        if self.seconds_per_epoch <= 0 or self.step_seconds <= 0:
            raise UsageError("seconds_per_epoch and step_seconds must be positive")
        if self.max_steps < self.checkpoint_interval_steps:
            raise UsageError("max_steps must cover at least one checkpoint")

    def readiness(self, step: int) -> float:
        return self.r_inf * step / (step + self.s_half)


# ---------------------------------------------------------------------------
# event streams


class WaitForAbort:
    """Stream marker: block for the harness abort before the tail events."""


@dataclass(frozen=True)
class RawLine:
    """Stream marker: write this text verbatim (fault injection)."""

    text: str


class Die:
    """Stream marker: exit nonzero immediately (fault injection)."""


StreamItem = Union[dict, WaitForAbort, RawLine, Die]


@dataclass(frozen=True)
class SimTrainerConfig:
    model_name: str
    task: TaskSpec
    curve: CurveParams
    seconds_per_epoch: float
    eval_interval_seconds: float = 10.0
    eval_duration_seconds: float = 1.0
    predictions_dir: Optional[str] = None
    params_millions: Optional[float] = None
    per_instance_ms: float = 5.0
    instance_count: int = 1000
    pretrain: Optional[PretrainSimParams] = None
    fault_kind: Optional[str] = None
    fault_after_evals: int = 0

    def __post_init__(self) -> None:
        if self.seconds_per_epoch <= 0:
            raise UsageError("seconds_per_epoch must be positive")
        if self.eval_interval_seconds <= 0:
            raise UsageError("eval_interval_seconds must be positive")
        if self.eval_duration_seconds < 0:
            raise UsageError("eval_duration_seconds must be nonnegative")
        if self.per_instance_ms <= 0:
            raise UsageError("per_instance_ms must be positive")
        if self.instance_count < 1:
            raise UsageError("instance_count must be >= 1")
        if self.fault_kind not in (None, "garbage_line", "unknown_event", "die"):
            raise UsageError(f"unknown fault kind: {self.fault_kind!r}")


def load_sim_config(path: str | Path) -> SimTrainerConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sim params file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    try:
        curve_raw = data.get("curve", {})
        curve = CurveParams(
            m_inf=float(curve_raw.get("m_inf", 95.0)),
            tau=float(curve_raw.get("tau", 100.0)),
            noise_sigma=float(curve_raw.get("noise_sigma", 0.0)),
            seed=int(curve_raw.get("seed", int(os.environ.get("EFFBENCH_SEED", "0")))),
            sim_speedup=float(curve_raw.get("sim_speedup", 1_000_000.0)),
        )
        pretrain = None
        if "pretrain" in data:
            p = data["pretrain"]
            pretrain = PretrainSimParams(
                r_inf=float(p["r_inf"]),
                s_half=float(p["s_half"]),
                finetune_curve=curve,
                checkpoint_interval_steps=int(p.get("checkpoint_interval_steps", 1000)),
                seconds_per_epoch=float(p.get("seconds_per_epoch", 100.0)),
                step_seconds=float(p.get("step_seconds", 0.5)),
                max_steps=int(p.get("max_steps", 20000)),
            )
        inference = data.get("inference", {})
        fault = data.get("fault") or {}
        instance_env = os.environ.get("EFFBENCH_INSTANCES")
        return SimTrainerConfig(
            model_name=str(data.get("model_name", "sim")),
            task=parse_task_spec(data["task"], "task"),
            curve=curve,
            seconds_per_epoch=float(data.get("seconds_per_epoch", 100.0)),
            eval_interval_seconds=float(data.get("eval_interval_seconds", 10.0)),
            eval_duration_seconds=float(data.get("eval_duration_seconds", 1.0)),
            predictions_dir=data.get("predictions_dir"),
            params_millions=(
                float(data["params_millions"]) if data.get("params_millions") is not None else None
            ),
            per_instance_ms=float(inference.get("per_instance_ms", 5.0)),
            instance_count=int(
                inference.get("instance_count", int(instance_env) if instance_env else 1000)
            ),
            pretrain=pretrain,
            fault_kind=fault.get("kind"),
            fault_after_evals=int(fault.get("after_evals", 0)),
        )
    except (KeyError, TypeError, ValueError, UsageError) as e:
        raise ConfigError(f"{path}: {e}")


def _prediction_files(cfg: SimTrainerConfig) -> List[Path]:
    assert cfg.predictions_dir is not None
    base = Path(cfg.predictions_dir)
    kind = cfg.task.metric_kind
    if kind is MetricKind.ENTITY_F1:
        return [base / metrics.CONLL_FILE]
    if kind is MetricKind.ACCURACY:
        return [base / metrics.LABELS_FILE]
    return [base / metrics.MNLI_MATCHED_FILE, base / metrics.MNLI_MISMATCHED_FILE]


def finetune_event_stream(cfg: SimTrainerConfig) -> Iterator[StreamItem]:
    """Protocol-conformant fine-tuning run, fully determined by the params.

    Evaluates every eval_interval of simulated training time; the final
    training chunk is clamped so the last evaluation of an unsuccessful run
    lands exactly on the epoch budget. After the cutoff is first reached the
    stream yields WaitForAbort, then dumps predictions and finishes, so its
    bytes never depend on how quickly the harness reacts.
    """
    task, curve = cfg.task, cfg.curve
    dt = cfg.eval_interval_seconds
    budget_seconds = task.epoch_budget * cfg.seconds_per_epoch

    hello: Dict[str, object] = {
        "kind": "hello",
        "model_name": cfg.model_name,
        "phase": Phase.FINETUNE.value,
        "task_name": task.name,
        "sim_elapsed": 0.0,
    }
    if cfg.params_millions is not None:
        hello["params_millions"] = cfg.params_millions
    yield hello

    k = 0
    evals = 0
    epochs_announced = 0
    while True:
        k += 1
        train = min(k * dt, budget_seconds)
        wall = train + evals * cfg.eval_duration_seconds
        yield {"kind": "step", "step_index": k, "sim_elapsed": wall}
        while train >= (epochs_announced + 1) * cfg.seconds_per_epoch - 1e-9:
            epochs_announced += 1
            yield {"kind": "epoch", "epoch_index": epochs_announced, "sim_elapsed": wall}
        yield {"kind": "eval_begin", "sim_elapsed": wall}
        evals += 1
        wall = train + evals * cfg.eval_duration_seconds
        metric = curve_value(curve, train)
        epoch_fraction = train / cfg.seconds_per_epoch
        yield {
            "kind": "eval",
            "metric_value": metric,
            "epoch_fraction": epoch_fraction,
            "sim_elapsed": wall,
        }
        if cfg.fault_kind and evals == cfg.fault_after_evals:
            if cfg.fault_kind == "garbage_line":
                yield RawLine("!!! this is not a protocol record !!!")
            elif cfg.fault_kind == "unknown_event":
                yield {"kind": "warp", "sim_elapsed": wall}
            else:
                yield Die()
        if metric >= task.cutoff:
            yield WaitForAbort()
            yield from _dump_events(cfg, wall)
            yield {"kind": "done", "reason": DoneReason.EXTERNAL_STOP.value, "sim_elapsed": wall}
            return
        if train >= budget_seconds:
            yield from _dump_events(cfg, wall)
            yield {
                "kind": "done",
                "reason": DoneReason.BUDGET_EXHAUSTED.value,
                "sim_elapsed": wall,
            }
            return


def _dump_events(cfg: SimTrainerConfig, wall: float) -> Iterator[dict]:
    if cfg.predictions_dir is None:
        return
    for path in _prediction_files(cfg):
        yield {"kind": "prediction_dump", "path": str(path), "sim_elapsed": wall}


def inference_event_stream(cfg: SimTrainerConfig) -> Iterator[StreamItem]:
    """One step per inference instance, paced at per_instance_ms of sim time."""
    yield {
        "kind": "hello",
        "model_name": cfg.model_name,
        "phase": Phase.INFERENCE.value,
        "task_name": cfg.task.name,
        "sim_elapsed": 0.0,
    }
    wall = 0.0
    for i in range(1, cfg.instance_count + 1):
        wall = i * cfg.per_instance_ms / 1000.0
        yield {"kind": "step", "step_index": i, "sim_elapsed": wall}
    yield {"kind": "done", "reason": DoneReason.COMPLETED.value, "sim_elapsed": wall}


# ---------------------------------------------------------------------------
# prediction files


def write_predictions(task: TaskSpec, target_metric: float, out_dir: str | Path, seed: int = 0) -> List[Path]:
    """Write dev-set prediction files that recompute to ``target_metric``
    within the file's grid granularity (well inside the +-0.1 validation
    tolerance for the shipped dev sizes)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = min(100.0, max(0.0, target_metric))
    kind = task.metric_kind
    if kind is MetricKind.ENTITY_F1:
        n = task.dev_size or 2000
        path = out / metrics.CONLL_FILE
        _write_conll(path, n, target)
        return [path]
    if kind is MetricKind.ACCURACY:
        n = task.dev_size or 2000
        path = out / metrics.LABELS_FILE
        _write_labels(path, n, target, ("positive", "negative"), seed)
        return [path]
    n = task.dev_size or 4000
    matched = out / metrics.MNLI_MATCHED_FILE
    mismatched = out / metrics.MNLI_MISMATCHED_FILE
    labels = ("entailment", "neutral", "contradiction")
    _write_labels(matched, n // 2, target, labels, seed)
    _write_labels(mismatched, n - n // 2, target, labels, seed + 1)
    return [matched, mismatched]


def _write_labels(
    path: Path, n: int, target: float, labels: Sequence[str], seed: int
) -> None:
    rng = random.Random(seed)
    gold = [labels[rng.randrange(len(labels))] for _ in range(n)]
    wrong = n - round(target / 100.0 * n)
    lines = ["index\tgold_label\tpred_label"]
    for i, g in enumerate(gold):
        pred = labels[(labels.index(g) + 1) % len(labels)] if i < wrong else g
        lines.append(f"{i}\t{g}\t{pred}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_conll(path: Path, n_sentences: int, target: float) -> None:
    # one gold span per sentence and one predicted span per sentence, so
    # F1 = matches / n_sentences exactly
    matches = round(target / 100.0 * n_sentences)
    lines: List[str] = []
    for i in range(n_sentences):
        correct = i < matches
        pred = ("B-PER", "O", "O") if correct else ("O", "O", "B-PER")
        gold = ("B-PER", "O", "O")
        for j in range(3):
            lines.append(f"w{i}_{j} {gold[j]} {pred[j]}")
        lines.append("")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# pretraining simulation


@dataclass(frozen=True)
class CheckpointOutcome:
    step: int
    readiness: float
    crossings: Dict[str, Optional[Tuple[float, float]]]

    @property
    def qualified(self) -> bool:
        return all(c is not None for c in self.crossings.values())


@dataclass(frozen=True)
class PretrainRecord:
    """Outcome of a simulated pretraining run: the first checkpoint whose
    fine-tune forks reach every task cutoff, and the pretraining time spent
    getting there (fork time is not charged to pretraining)."""

    status: RunStatus
    qualifying_step: Optional[int]
    metered_seconds: float
    checkpoints: Tuple[CheckpointOutcome, ...]

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "qualifying_step": self.qualifying_step,
            "metered_seconds": self.metered_seconds,
            "checkpoints": [
                {
                    "step": c.step,
                    "readiness": c.readiness,
                    "crossings": {
                        t: (list(x) if x is not None else None) for t, x in c.crossings.items()
                    },
                }
                for c in self.checkpoints
            ],
        }


def finetune_fork_series(
    params: PretrainSimParams, task: TaskSpec, readiness: float, eval_interval: float, fork_seed: int = 0
) -> MeasurementSeries:
    """The measurement series a checkpoint's fine-tune fork would produce."""
    curve = params.finetune_curve.scaled(readiness, seed_offset=fork_seed)
    budget_seconds = task.epoch_budget * params.seconds_per_epoch
    points = []
    k = 0
    while True:
        k += 1
        train = min(k * eval_interval, budget_seconds)
        points.append(
            MeasurementPoint(
                elapsed_seconds=train,
                metric_value=curve_value(curve, train),
                epoch_fraction=train / params.seconds_per_epoch,
            )
        )
        if points[-1].metric_value >= task.cutoff or train >= budget_seconds:
            return MeasurementSeries(points=tuple(points), metric_kind=task.metric_kind)


def run_sim_pretrain(
    params: PretrainSimParams, tasks: Sequence[TaskSpec], eval_interval: float
) -> PretrainRecord:
    """Simulate pretraining with periodic checkpoint-clone-finetune probes.

    Every checkpoint_interval_steps, each task gets a fine-tune fork whose
    asymptote is scaled by the checkpoint's readiness; the first checkpoint
    whose forks cross every cutoff qualifies, and pretraining is charged up
    to that checkpoint only.
    """
    if not tasks:
        raise UsageError("no tasks")
    if eval_interval <= 0:
        raise UsageError("eval_interval must be positive")
    outcomes: List[CheckpointOutcome] = []
    step = params.checkpoint_interval_steps
    while step <= params.max_steps:
        rho = params.readiness(step)
        crossings = {
            task.name: detect_crossing(
                finetune_fork_series(params, task, rho, eval_interval, fork_seed=step + i), task
            )
            for i, task in enumerate(tasks)
        }
        outcome = CheckpointOutcome(step=step, readiness=rho, crossings=crossings)
        outcomes.append(outcome)
        if outcome.qualified:
            return PretrainRecord(
                status=RunStatus.REACHED,
                qualifying_step=step,
                metered_seconds=step * params.step_seconds,
                checkpoints=tuple(outcomes),
            )
        step += params.checkpoint_interval_steps
    return PretrainRecord(
        status=RunStatus.NOT_REACHED,
        qualifying_step=None,
        metered_seconds=params.max_steps * params.step_seconds,
        checkpoints=tuple(outcomes),
    )


# ---------------------------------------------------------------------------
# process entry point


def _stdin_command(timeout: float) -> Optional[str]:
    """Read one command line from stdin, waiting up to ``timeout`` seconds.

    Returns the stripped command, "" on EOF, or None on timeout.
    """
    ready, _, _ = select.select([sys.stdin], [], [], timeout)
    if not ready:
        return None
    line = sys.stdin.readline()
    if line == "":
        return ""
    return line.strip()


def run_trainer_process(
    params_path: str | Path,
    phase: Phase,
    out=None,
    begin_timeout: float = 30.0,
    abort_wait_timeout: float = 10.0,
) -> int:
    """Drive a sim trainer over stdio; returns the process exit code."""
    out = out or sys.stdout
    cfg = load_sim_config(params_path)
    if phase is Phase.PRETRAIN:
        raise UsageError("pretraining is simulated in-process; use the pretrain subcommand")
    stream = (
        inference_event_stream(cfg) if phase is Phase.INFERENCE else finetune_event_stream(cfg)
    )

    def emit(text: str) -> None:
        out.write(text + "\n")
        out.flush()

    # wait for the harness to say begin; EOF means no harness is attached
    cmd = _stdin_command(begin_timeout)
    if cmd == ABORT_COMMAND:
        return 0
    if cmd not in (BEGIN_COMMAND, ""):
        emit(encode_event({"kind": "fatal", "message": f"expected begin, got {cmd!r}"}))
        return 1

    aborted_midrun = False
    passed_wait = False
    last_metric: Optional[float] = None
    prev_sim = 0.0
    for item in stream:
        if isinstance(item, Die):
            out.flush()
            return 1
        if isinstance(item, RawLine):
            emit(item.text)
            continue
        if isinstance(item, WaitForAbort):
            # cutoff reached: hold the deterministic tail until the harness
            # reacts (or gives up), then emit it regardless
            _stdin_command(abort_wait_timeout)
            passed_wait = True
            continue
        if not passed_wait and _stdin_command(0.0) == ABORT_COMMAND:
            aborted_midrun = True
            break
        sim_now = float(item.get("sim_elapsed", prev_sim))
        delay = (sim_now - prev_sim) / cfg.curve.sim_speedup
        if delay > 0:
            time.sleep(delay)
        prev_sim = sim_now
        if item.get("kind") == "eval":
            last_metric = float(item["metric_value"])
        if item.get("kind") == "prediction_dump" and last_metric is not None:
            write_predictions(cfg.task, last_metric, Path(item["path"]).parent, seed=cfg.curve.seed)
        emit(encode_event(item))
    if aborted_midrun:
        # harness cut the run short: checkpoint dev output, then leave cleanly
        if last_metric is not None and cfg.predictions_dir is not None:
            write_predictions(cfg.task, last_metric, cfg.predictions_dir, seed=cfg.curve.seed)
            for path in _prediction_files(cfg):
                emit(
                    encode_event(
                        {"kind": "prediction_dump", "path": str(path), "sim_elapsed": prev_sim}
                    )
                )
        emit(
            encode_event(
                {
                    "kind": "done",
                    "reason": DoneReason.EXTERNAL_STOP.value,
                    "sim_elapsed": prev_sim,
                }
            )
        )
    return 0
