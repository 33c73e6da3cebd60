"""Ties everything together: spawn trainers per task and phase, meter them,
score the results, and write run artifacts.

A run directory contains:

    run.json                      full structured results (determinstic bytes)
    events/<phase>-<task>.events  annotated event logs
    predictions/<task>/...        dev output collected from prediction dumps
    submissions/<model>/...       a validation-ready submission bundle
    leaderboard.json/.md, index.html          time-basis leaderboard
    leaderboard_cost.json/.md/.html           cost basis, when derivable

Tasks run sequentially by default; --parallel is allowed only with the
simulated clock, where every session owns a private clock and cannot
contaminate another's timing.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .config import BenchmarkConfig, effective_seed, parse_config, serialize_config
from .errors import ConfigError, UsageError
from .leaderboard import build_leaderboard, write_leaderboard
from .metering import cost_for_seconds
from .scoring import ReferenceBaseline, ReferenceEntry, build_scorecard
from .simtrainer import PretrainRecord, load_sim_config, run_sim_pretrain
from .supervisor import SessionOutcome, run_session
from .types import (
    MeasurementPoint,
    MeasurementSeries,
    Phase,
    PhaseResult,
    RunStatus,
    ScoreBasis,
    ScoreCard,
)

RUN_SCHEMA = "effbench-run/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED_SESSIONS = 3
EXIT_INTERNAL = 4


@dataclass
class TaskRunRecord:
    result: PhaseResult
    outcome: Optional[SessionOutcome] = None
    series: Optional[MeasurementSeries] = None
    done_reason: Optional[str] = None
    diagnostic: Optional[str] = None
    exit_code: Optional[int] = None
    step_count: int = 0
    log_rel: Optional[str] = None
    predictions_rel: Optional[str] = None


@dataclass
class RunBundle:
    config: BenchmarkConfig
    model_name: str
    phases: Tuple[Phase, ...]
    records: Dict[Phase, Dict[str, TaskRunRecord]]
    out_dir: Optional[Path] = None
    pretrain: Optional[PretrainRecord] = None
    scorecards: Dict[Tuple[Phase, ScoreBasis], ScoreCard] = field(default_factory=dict)
    exit_code: int = EXIT_OK

    def phase_results(self, phase: Phase) -> Dict[str, PhaseResult]:
        return {name: rec.result for name, rec in self.records.get(phase, {}).items()}


def _substitute(template: str, task: str, phase: Phase, config_path: str) -> str:
    cmd = template
    for key, value in (("{task}", task), ("{phase}", phase.value), ("{config}", config_path)):
        cmd = cmd.replace(key, value)
    return cmd


def _build_phase_result(
    outcome: SessionOutcome, config: BenchmarkConfig, phase: Phase
) -> PhaseResult:
    charged = (
        outcome.wall_seconds if config.cost_time_basis == "wall" else outcome.metered_seconds
    )
    cost = cost_for_seconds(charged, config.hardware) if config.hardware else 0.0
    crossing = outcome.crossing
    if outcome.status is RunStatus.REACHED and phase is Phase.INFERENCE:
        crossing = (outcome.metered_seconds, outcome.latency_ms)
    return PhaseResult(
        phase=phase,
        status=outcome.status,
        metered_seconds=outcome.metered_seconds,
        wall_seconds=outcome.wall_seconds,
        cost_usd=cost,
        crossing_point=crossing,
        latency_ms=outcome.latency_ms,
    )


def run_benchmark(
    config: BenchmarkConfig,
    trainer_template: str,
    phases: Sequence[Phase] = (Phase.FINETUNE,),
    out_dir: Optional[str | Path] = None,
    *,
    config_path: str = "",
    clock_mode: Optional[str] = None,
    parallel: int = 1,
    pretrain_params_path: Optional[str | Path] = None,
) -> RunBundle:
    """Benchmark one model across all configured tasks and phases."""
    if not config.tasks:
        raise ConfigError("no tasks")
    if not trainer_template.strip():
        raise ConfigError("trainer command template is empty")
    phases = tuple(dict.fromkeys(phases))
    clock = clock_mode or config.clock
    if parallel < 1:
        raise UsageError("parallel must be >= 1")
    if parallel > 1 and clock != "simulated":
        raise UsageError("--parallel is only allowed with the simulated clock (sim trainers)")

    env = dict(os.environ)
    env["EFFBENCH_SEED"] = str(effective_seed(config))
    env["EFFBENCH_INSTANCES"] = str(config.instance_count)

    records: Dict[Phase, Dict[str, TaskRunRecord]] = {}
    model_name: Optional[str] = None
    any_aborted = False

    protocol_phases = [p for p in phases if p is not Phase.PRETRAIN]
    for phase in protocol_phases:
        sessions: Dict[str, SessionOutcome] = {}

        def _run_one(task_name: str) -> SessionOutcome:
            task = config.task(task_name)
            cmd = _substitute(trainer_template, task.name, phase, config_path)
            return run_session(
                cmd,
                task,
                phase,
                clock_mode=clock,
                idle_timeout=config.idle_timeout_seconds,
                env=env,
            )

        if parallel > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=parallel) as pool:
                futures = {name: pool.submit(_run_one, name) for name in config.task_names}
                sessions = {name: f.result() for name, f in futures.items()}
        else:
            for name in config.task_names:
                sessions[name] = _run_one(name)

        records[phase] = {}
        for name, outcome in sessions.items():
            if model_name is None and outcome.model_name:
                model_name = outcome.model_name
            if not outcome.completed:
                any_aborted = True
            records[phase][name] = TaskRunRecord(
                result=_build_phase_result(outcome, config, phase),
                outcome=outcome,
                series=outcome.series,
                done_reason=outcome.done_reason.value if outcome.done_reason else None,
                diagnostic=outcome.diagnostic,
                exit_code=outcome.exit_code,
                step_count=outcome.step_count,
            )

    bundle = RunBundle(
        config=config,
        model_name=model_name or "unknown",
        phases=phases,
        records=records,
        exit_code=EXIT_ABORTED_SESSIONS if any_aborted else EXIT_OK,
    )

    if Phase.PRETRAIN in phases:
        if pretrain_params_path is None:
            raise ConfigError(
                "pretrain phase needs --sim-pretrain <params-file> (checkpoint-clone simulation)"
            )
        sim_cfg = load_sim_config(pretrain_params_path)
        if sim_cfg.pretrain is None:
            raise ConfigError(f"{pretrain_params_path}: no 'pretrain' section")
        bundle.pretrain = run_sim_pretrain(
            sim_cfg.pretrain, config.tasks, config.eval_interval_seconds
        )

    _attach_scorecards(bundle)
    if out_dir is not None:
        write_run_artifacts(bundle, Path(out_dir))
    return bundle


def inference_benchmark(
    config: BenchmarkConfig,
    trainer_template: str,
    instance_count: Optional[int] = None,
    out_dir: Optional[str | Path] = None,
    **kwargs,
) -> Tuple[Dict[str, Optional[float]], RunBundle]:
    """Per-task mean latency (ms) plus the full inference-phase results."""
    if instance_count is not None:
        if instance_count < 1:
            raise UsageError("instance_count must be >= 1")
        config = parse_config({**serialize_config(config), "instance_count": instance_count})
    bundle = run_benchmark(
        config, trainer_template, phases=(Phase.INFERENCE,), out_dir=out_dir, **kwargs
    )
    latencies = {
        name: rec.result.latency_ms for name, rec in bundle.records[Phase.INFERENCE].items()
    }
    return latencies, bundle


# ---------------------------------------------------------------------------
# scoring integration


def _derive_cost_baseline(
    baseline: ReferenceBaseline, config: BenchmarkConfig, phase: Phase
) -> Optional[ReferenceBaseline]:
    """Fill missing reference costs where they are derivable (finetune time
    under the configured profile); None when cost scoring is impossible."""
    entries = {}
    for task, entry in baseline.per_task.items():
        if entry.reference_cost_usd is not None:
            entries[task] = entry
        elif phase is Phase.FINETUNE and config.hardware is not None:
            entries[task] = ReferenceEntry(
                reference_seconds=entry.reference_seconds,
                reference_cost_usd=cost_for_seconds(entry.reference_seconds, config.hardware),
            )
        else:
            return None
    return ReferenceBaseline(model_name=baseline.model_name, per_task=entries)


def _baseline_from_results(
    model_name: str, results: Mapping[str, PhaseResult], phase: Phase
) -> Optional[ReferenceBaseline]:
    entries = {}
    for task, result in results.items():
        if result.status is not RunStatus.REACHED:
            return None
        seconds = result.latency_ms if phase is Phase.INFERENCE else result.metered_seconds
        if not seconds or (result.cost_usd or 0) < 0:
            return None
        entries[task] = ReferenceEntry(
            reference_seconds=seconds,
            reference_cost_usd=result.cost_usd if result.cost_usd > 0 else None,
        )
    return ReferenceBaseline(model_name=model_name, per_task=entries) if entries else None


def resolve_baseline(
    config: BenchmarkConfig,
    phase: Phase,
    reference_run: Optional[Mapping[str, PhaseResult]] = None,
) -> Optional[ReferenceBaseline]:
    """Configured baseline for a phase, else one built from a reference run."""
    baseline = config.reference_baseline.get(phase)
    if baseline is not None:
        return baseline
    if reference_run is not None:
        return _baseline_from_results(config.reference_model, reference_run, phase)
    return None


def _attach_scorecards(bundle: RunBundle) -> None:
    config = bundle.config
    for phase, task_records in bundle.records.items():
        results = {name: rec.result for name, rec in task_records.items()}
        own_run = results if bundle.model_name == config.reference_model else None
        baseline = resolve_baseline(config, phase, reference_run=own_run)
        if baseline is None:
            continue
        bundle.scorecards[(phase, ScoreBasis.TIME)] = build_scorecard(
            bundle.model_name, results, baseline, ScoreBasis.TIME
        )
        cost_baseline = _derive_cost_baseline(baseline, config, phase)
        if cost_baseline is not None and config.hardware is not None:
            bundle.scorecards[(phase, ScoreBasis.COST)] = build_scorecard(
                bundle.model_name, results, cost_baseline, ScoreBasis.COST
            )


# ---------------------------------------------------------------------------
# artifacts


def _result_dict(rec: TaskRunRecord) -> Dict:
    r = rec.result
    return {
        "status": r.status.value,
        "metered_seconds": r.metered_seconds,
        "wall_seconds": r.wall_seconds,
        "cost_usd": r.cost_usd,
        "crossing": list(r.crossing_point) if r.crossing_point else None,
        "latency_ms": r.latency_ms,
        "done_reason": rec.done_reason,
        "diagnostic": rec.diagnostic,
        "exit_code": rec.exit_code,
        "step_count": rec.step_count,
        "series": (
            [[p.elapsed_seconds, p.metric_value, p.epoch_fraction] for p in rec.series]
            if rec.series is not None
            else []
        ),
        "log": rec.log_rel,
        "predictions": rec.predictions_rel,
    }


def write_run_artifacts(bundle: RunBundle, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle.out_dir = out_dir

    for phase, task_records in bundle.records.items():
        for name, rec in task_records.items():
            if rec.outcome is None:
                continue
            events_dir = out_dir / "events"
            events_dir.mkdir(exist_ok=True)
            log_rel = f"events/{phase.value}-{name}.events"
            (out_dir / log_rel).write_text(
                "\n".join(rec.outcome.log_lines) + "\n", encoding="utf-8"
            )
            rec.log_rel = log_rel
            if rec.outcome.prediction_paths:
                pred_rel = f"predictions/{name}"
                pred_dir = out_dir / pred_rel
                pred_dir.mkdir(parents=True, exist_ok=True)
                for src in rec.outcome.prediction_paths:
                    src_path = Path(src)
                    if src_path.is_file():
                        shutil.copyfile(src_path, pred_dir / src_path.name)
                rec.predictions_rel = pred_rel

    run_doc = {
        "schema": RUN_SCHEMA,
        "model_name": bundle.model_name,
        "phases": [p.value for p in bundle.phases],
        "exit_code": bundle.exit_code,
        "config": serialize_config(bundle.config),
        "pretrain": bundle.pretrain.to_dict() if bundle.pretrain else None,
        "results": {
            phase.value: {name: _result_dict(rec) for name, rec in task_records.items()}
            for phase, task_records in bundle.records.items()
        },
    }
    (out_dir / "run.json").write_text(
        json.dumps(run_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    # a submission requires fine-tuning logs; inference-only runs have none
    if Phase.FINETUNE in bundle.records:
        build_submission(bundle, out_dir / "submissions" / bundle.model_name)
    write_leaderboards(bundle, out_dir)
    return out_dir


def write_leaderboards(bundle: RunBundle, out_dir: Path) -> List[Path]:
    """Time-basis (and, when derivable, cost-basis) leaderboards per phase."""
    written: List[Path] = []
    for (phase, basis), card in sorted(
        bundle.scorecards.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
    ):
        board = build_leaderboard(
            [card],
            tasks=bundle.config.task_names,
            reference_model=bundle.config.reference_model,
            basis=basis,
            phase=phase,
        )
        stem = "leaderboard" if basis is ScoreBasis.TIME else "leaderboard_cost"
        if phase is not Phase.FINETUNE:
            stem = f"{stem}_{phase.value}"
        written += write_leaderboard(board, out_dir, stem=stem)
    return written


def build_submission(bundle: RunBundle, sub_dir: Path) -> Path:
    """Assemble a validation-ready submission bundle from a run."""
    sub_dir.mkdir(parents=True, exist_ok=True)
    (sub_dir / "logs").mkdir(exist_ok=True)
    config = bundle.config
    hardware = "unspecified"
    if config.hardware is not None:
        hardware = (
            f"{config.hardware.unit_count}x {config.hardware.kind.value}"
            f" @ ${config.hardware.unit_price_per_hour}/h"
        )

    tasks_section: Dict[str, Dict] = {}
    params_millions = None
    for phase, task_records in bundle.records.items():
        for name, rec in task_records.items():
            if rec.outcome is None:
                continue
            if rec.outcome.params_millions is not None:
                params_millions = rec.outcome.params_millions
            entry = tasks_section.setdefault(name, {})
            log_rel = f"logs/{phase.value}-{name}.events"
            (sub_dir / log_rel).write_text(
                "\n".join(rec.outcome.log_lines) + "\n", encoding="utf-8"
            )
            if phase is Phase.INFERENCE:
                entry["inference"] = {
                    "status": rec.result.status.value,
                    "claimed_latency_ms": rec.result.latency_ms,
                    "claimed_cost_usd": rec.result.cost_usd,
                    "log": log_rel,
                }
                continue
            section: Dict[str, object] = {
                "status": "reached" if rec.result.status is RunStatus.REACHED else "not_reached",
                "log": log_rel,
            }
            if rec.result.status is RunStatus.REACHED:
                assert rec.result.crossing_point is not None
                section["claimed_seconds"] = rec.result.metered_seconds
                section["claimed_metric"] = rec.result.crossing_point[1]
                section["claimed_cost_usd"] = rec.result.cost_usd
            if rec.outcome.prediction_paths:
                pred_rel = f"predictions/{name}"
                pred_dir = sub_dir / pred_rel
                pred_dir.mkdir(parents=True, exist_ok=True)
                for src in rec.outcome.prediction_paths:
                    src_path = Path(src)
                    if src_path.is_file():
                        shutil.copyfile(src_path, pred_dir / src_path.name)
                section["predictions"] = pred_rel
            entry["finetune" if phase is Phase.FINETUNE else phase.value] = section

    manifest = {
        "model_name": bundle.model_name,
        "hardware": hardware,
        "params_millions": params_millions,
        "source_reference": f"effbench-run:{bundle.model_name}",
        "tasks": tasks_section,
    }
    (sub_dir / "submission.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return sub_dir


# ---------------------------------------------------------------------------
# loading results back (score / leaderboard subcommands)


@dataclass
class LoadedRun:
    model_name: str
    config: BenchmarkConfig
    results: Dict[Phase, Dict[str, PhaseResult]]


def load_run(results_dir: str | Path) -> LoadedRun:
    path = Path(results_dir) / "run.json"
    if not path.is_file():
        raise ConfigError(f"run results not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("schema") != RUN_SCHEMA:
        raise ConfigError(f"{path}: unsupported schema {doc.get('schema')!r}")
    config = parse_config(doc["config"])
    results: Dict[Phase, Dict[str, PhaseResult]] = {}
    for phase_raw, tasks in doc.get("results", {}).items():
        phase = Phase(phase_raw)
        results[phase] = {}
        for name, r in tasks.items():
            results[phase][name] = PhaseResult(
                phase=phase,
                status=RunStatus(r["status"]),
                metered_seconds=r["metered_seconds"],
                wall_seconds=r["wall_seconds"],
                cost_usd=r["cost_usd"],
                crossing_point=tuple(r["crossing"]) if r.get("crossing") else None,
                latency_ms=r.get("latency_ms"),
            )
    return LoadedRun(model_name=doc["model_name"], config=config, results=results)


def score_runs(
    runs: Sequence[LoadedRun], config: Optional[BenchmarkConfig] = None
) -> Dict[Tuple[Phase, ScoreBasis], List[ScoreCard]]:
    """Cross-score several runs into leaderboard-ready scorecards per phase.

    The baseline comes from the config when present, otherwise from the run
    whose model is the configured reference model.
    """
    if not runs:
        raise UsageError("no runs to score")
    config = config or runs[0].config
    cards: Dict[Tuple[Phase, ScoreBasis], List[ScoreCard]] = {}
    phases = {phase for run in runs for phase in run.results}
    for phase in phases:
        reference_run = next(
            (r.results[phase] for r in runs if r.model_name == config.reference_model and phase in r.results),
            None,
        )
        baseline = resolve_baseline(config, phase, reference_run=reference_run)
        if baseline is None:
            continue
        cost_baseline = _derive_cost_baseline(baseline, config, phase)
        for run in runs:
            if phase not in run.results:
                continue
            cards.setdefault((phase, ScoreBasis.TIME), []).append(
                build_scorecard(run.model_name, run.results[phase], baseline, ScoreBasis.TIME)
            )
            if cost_baseline is not None and config.hardware is not None:
                cards.setdefault((phase, ScoreBasis.COST), []).append(
                    build_scorecard(
                        run.model_name, run.results[phase], cost_baseline, ScoreBasis.COST
                    )
                )
    return cards


def write_scored_leaderboards(
    cards: Mapping[Tuple[Phase, ScoreBasis], List[ScoreCard]],
    config: BenchmarkConfig,
    out_dir: Path,
) -> List[Path]:
    written: List[Path] = []
    for (phase, basis), phase_cards in sorted(
        cards.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
    ):
        board = build_leaderboard(
            phase_cards,
            tasks=config.task_names,
            reference_model=config.reference_model,
            basis=basis,
            phase=phase,
        )
        stem = "leaderboard" if basis is ScoreBasis.TIME else "leaderboard_cost"
        if phase is not Phase.FINETUNE:
            stem = f"{stem}_{phase.value}"
        written += write_leaderboard(board, out_dir, stem=stem)
    return written
