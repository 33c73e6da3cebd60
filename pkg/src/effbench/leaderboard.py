"""Submission validation, ranking, and leaderboard rendering.

Submission layout (a directory or a .zip archive of one):

    submission.json            manifest, see below
    predictions/<task>/...     dev-set output files (metrics module formats)
    logs/<phase>-<task>.events harness-annotated event logs

Manifest shape:

    {
      "model_name": "...",
      "hardware": "1x GTX 2080 Ti",
      "params_millions"?: 125.0,
      "source_reference": "https://github.com/... or sha256:...",
      "tasks": {
        "<task>": {
          "finetune": {
            "status": "reached" | "not_reached",
            "claimed_metric"?: 91.3,       required when reached
            "claimed_seconds"?: 300.0,     required when reached
            "claimed_cost_usd"?: 0.25,
            "log": "logs/finetune-<task>.events",
            "predictions": "predictions/<task>"
          },
          "inference"?: {
            "status": "reached",
            "claimed_latency_ms": 2.68,
            "log": "logs/inference-<task>.events"
          }
        }
      }
    }

Validation replays the logs through the real parser and crossing detector,
recomputes claimed metrics from the prediction files, and reports coverage
(fraction of the dev set the submitted output covers).
"""

from __future__ import annotations

import html
import json
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import metrics
from .config import BenchmarkConfig
from .cutoff import detect_crossing
from .errors import BenchmarkError, ProtocolError, UsageError
from .protocol import EventKind, parse_event
from .types import (
    MeasurementPoint,
    MeasurementSeries,
    Phase,
    RunStatus,
    ScoreBasis,
    ScoreCard,
    TaskSpec,
)

METRIC_TOLERANCE = 0.1  # percentage points between claimed and recomputed metrics


@dataclass(frozen=True)
class SubmissionRecord:
    root: Path
    manifest: Dict
    _tempdir: Optional[tempfile.TemporaryDirectory] = None

    def path(self, relative: str) -> Path:
        return self.root / relative


def load_submission(path: str | Path) -> SubmissionRecord:
    path = Path(path)
    tempdir = None
    if path.is_file() and path.suffix == ".zip":
        tempdir = tempfile.TemporaryDirectory(prefix="effbench-submission-")
        with zipfile.ZipFile(path) as zf:
            zf.extractall(tempdir.name)
        root = Path(tempdir.name)
    elif path.is_dir():
        root = path
    else:
        raise UsageError(f"submission not found (expected directory or .zip): {path}")
    manifest_path = root / "submission.json"
    if not manifest_path.is_file():
        raise UsageError(f"submission manifest missing: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"{manifest_path}: invalid JSON: {e}")
    return SubmissionRecord(root=root, manifest=manifest, _tempdir=tempdir)


@dataclass(frozen=True)
class CheckResult:
    check: str
    passed: bool
    detail: str
    task: Optional[str] = None

    def describe(self) -> str:
        scope = f" [{self.task}]" if self.task else ""
        return f"{'PASS' if self.passed else 'FAIL'} {self.check}{scope}: {self.detail}"


@dataclass
class ValidationReport:
    checks: List[CheckResult] = field(default_factory=list)
    coverage: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def add(self, check: str, passed: bool, detail: str, task: Optional[str] = None) -> None:
        self.checks.append(CheckResult(check=check, passed=passed, detail=detail, task=task))

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "coverage": self.coverage,
            "checks": [
                {"check": c.check, "task": c.task, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }


def replay_series(log_path: Path, task: TaskSpec) -> MeasurementSeries:
    """Rebuild a measurement series from an annotated event log."""
    points: List[MeasurementPoint] = []
    for raw in log_path.read_text(encoding="utf-8").splitlines():
        event = parse_event(raw)
        if event is None or event.kind is not EventKind.EVAL:
            continue
        annotated = json.loads(raw)
        if "metered_elapsed" not in annotated:
            raise UsageError(f"{log_path}: eval line lacks metered_elapsed annotation")
        points.append(
            MeasurementPoint(
                elapsed_seconds=float(annotated["metered_elapsed"]),
                metric_value=event.metric_value,
                epoch_fraction=event.epoch_fraction,
            )
        )
    return MeasurementSeries(points=tuple(points), metric_kind=task.metric_kind)


def _validate_finetune(
    record: SubmissionRecord, task: TaskSpec, entry: Dict, report: ValidationReport
) -> None:
    name = task.name
    status = entry.get("status")
    if status not in ("reached", "not_reached"):
        report.add("claim", False, f"status must be reached or not_reached, got {status!r}", name)
        return

    log_rel = entry.get("log")
    if not log_rel or not record.path(log_rel).is_file():
        report.add("log", False, f"event log missing: {log_rel!r}", name)
        return
    try:
        series = replay_series(record.path(log_rel), task)
    except (BenchmarkError, ProtocolError, ValueError) as e:
        report.add("log", False, f"log replay failed: {e}", name)
        return
    report.add("log", True, f"replayed {len(series)} eval points", name)

    if status == "not_reached":
        spent = series.max_epoch_fraction
        if spent >= task.epoch_budget:
            report.add("epoch-budget", True, f"{spent:g} epochs spent (budget {task.epoch_budget})", name)
        else:
            report.add(
                "epoch-budget",
                False,
                f"N/A claim but log shows only {spent:g} of {task.epoch_budget} epochs",
                name,
            )
        return

    claimed_metric = entry.get("claimed_metric")
    claimed_seconds = entry.get("claimed_seconds")
    if claimed_metric is None or claimed_seconds is None:
        report.add("claim", False, "reached claim needs claimed_metric and claimed_seconds", name)
        return

    pred_rel = entry.get("predictions")
    if not pred_rel or not record.path(pred_rel).is_dir():
        report.add("predictions", False, f"predictions directory missing: {pred_rel!r}", name)
    else:
        try:
            recomputed, examples = metrics.recompute_metric(task, record.path(pred_rel))
            if task.dev_size:
                report.coverage[name] = round(100.0 * examples / task.dev_size, 4)
            if abs(recomputed - float(claimed_metric)) <= METRIC_TOLERANCE:
                report.add(
                    "metric", True, f"claimed {claimed_metric:g}, recomputed {recomputed:.4f}", name
                )
            else:
                report.add(
                    "metric",
                    False,
                    f"metric mismatch: claimed {claimed_metric:g}, recomputed {recomputed:.4f}",
                    name,
                )
        except BenchmarkError as e:
            report.add("predictions", False, f"unreadable predictions: {e}", name)

    crossing = detect_crossing(series, task)
    if crossing is None:
        report.add("crossing", False, "claimed crossing not supported by log: no point reaches the cutoff", name)
    elif crossing[0] > float(claimed_seconds) + 1e-6:
        report.add(
            "crossing",
            False,
            f"claimed crossing not supported by log: first crossing at {crossing[0]:g}s, "
            f"claimed {claimed_seconds:g}s",
            name,
        )
    else:
        report.add("crossing", True, f"crossing at {crossing[0]:g}s <= claimed {claimed_seconds:g}s", name)


def _validate_inference(
    record: SubmissionRecord, task: TaskSpec, entry: Dict, report: ValidationReport
) -> None:
    name = task.name
    log_rel = entry.get("log")
    claimed = entry.get("claimed_latency_ms")
    if not log_rel or not record.path(log_rel).is_file():
        report.add("inference-log", False, f"event log missing: {log_rel!r}", name)
        return
    steps = 0
    metered = None
    for raw in record.path(log_rel).read_text(encoding="utf-8").splitlines():
        event = parse_event(raw)
        if event is None:
            continue
        if event.kind is EventKind.STEP:
            steps += 1
        annotated = json.loads(raw)
        if "metered_elapsed" in annotated:
            metered = float(annotated["metered_elapsed"])
    if steps == 0 or metered is None:
        report.add("inference-log", False, "log reports zero instances", name)
        return
    recomputed = metered * 1000.0 / steps
    if claimed is None:
        report.add("inference-claim", False, "claimed_latency_ms missing", name)
        return
    tolerance = max(0.01, 0.005 * float(claimed))
    if abs(recomputed - float(claimed)) <= tolerance:
        report.add(
            "inference-latency", True, f"claimed {claimed:g}ms, recomputed {recomputed:.4f}ms", name
        )
    else:
        report.add(
            "inference-latency",
            False,
            f"latency mismatch: claimed {claimed:g}ms, recomputed {recomputed:.4f}ms",
            name,
        )


def validate_submission(record: SubmissionRecord, config: BenchmarkConfig) -> ValidationReport:
    """Check a submission against the benchmark definition.

    Verifies required fields, recomputes claimed metrics from the submitted
    dev output, confirms claimed crossings against the submitted logs,
    confirms N/A claims spent the epoch budget, and requires a source
    reference for reproducibility.
    """
    report = ValidationReport()
    manifest = record.manifest

    for fld in ("model_name", "hardware", "tasks"):
        if not manifest.get(fld):
            report.add("required-fields", False, f"missing required field: {fld}")
    if not any(not c.passed and c.check == "required-fields" for c in report.checks):
        report.add("required-fields", True, "model_name, hardware, tasks present")

    if manifest.get("source_reference"):
        report.add("source", True, f"source reference: {manifest['source_reference']}")
    else:
        report.add("source", False, "source required")

    tasks_section = manifest.get("tasks") or {}
    for task in config.tasks:
        entry = tasks_section.get(task.name)
        if not isinstance(entry, dict) or "finetune" not in entry:
            report.add("coverage", False, "no claimed result or explicit N/A for task", task.name)
            continue
        _validate_finetune(record, task, entry["finetune"], report)
        if "inference" in entry:
            _validate_inference(record, task, entry["inference"], report)
    return report


# ---------------------------------------------------------------------------
# ranking and rendering


@dataclass(frozen=True)
class Leaderboard:
    basis: ScoreBasis
    tasks: Tuple[str, ...]
    reference_model: str
    entries: Tuple[ScoreCard, ...]
    phase: Phase = Phase.FINETUNE


def rank(scorecards: Sequence[ScoreCard]) -> List[ScoreCard]:
    """Order scorecards by displayed overall, descending; ties alphabetical."""
    if not scorecards:
        return []
    basis = scorecards[0].basis
    tasks = set(scorecards[0].per_task.keys())
    for card in scorecards[1:]:
        if card.basis is not basis:
            raise UsageError("cannot rank scorecards with mixed bases")
        if set(card.per_task.keys()) != tasks:
            raise UsageError("cannot rank scorecards with different task sets")
    return sorted(scorecards, key=lambda c: (-c.overall_score, c.model_name))


def build_leaderboard(
    scorecards: Sequence[ScoreCard],
    tasks: Sequence[str],
    reference_model: str,
    basis: ScoreBasis,
    phase: Phase = Phase.FINETUNE,
) -> Leaderboard:
    return Leaderboard(
        basis=basis,
        tasks=tuple(tasks),
        reference_model=reference_model,
        entries=tuple(rank(list(scorecards))),
        phase=phase,
    )


def _entry_dict(card: ScoreCard, tasks: Sequence[str]) -> Dict:
    return {
        "model_name": card.model_name,
        "overall_score": card.overall_score,
        "overall_exact": card.overall_exact,
        "per_task": {
            t: {
                "raw": card.per_task[t].raw_value,
                "score": card.per_task[t].display,
                "score_exact": card.per_task[t].score,
                "status": card.per_task[t].status.value,
            }
            for t in tasks
        },
    }


def render(board: Leaderboard, fmt: str) -> str:
    """Render a leaderboard document; byte-deterministic for a given board."""
    if fmt == "json":
        return render_json(board)
    if fmt == "markdown" or fmt == "md":
        return render_markdown(board)
    if fmt == "html":
        return render_html(board)
    raise UsageError(f"unknown leaderboard format: {fmt!r} (expected json, markdown, html)")


def render_json(board: Leaderboard) -> str:
    doc = {
        "basis": board.basis.value,
        "phase": board.phase.value,
        "tasks": list(board.tasks),
        "reference_model": board.reference_model,
        "entries": [_entry_dict(card, board.tasks) for card in board.entries],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _raw_cell(value: Optional[float]) -> str:
    return "N/A" if value is None else f"{value:g}"


def render_markdown(board: Leaderboard) -> str:
    header = ["Model"]
    for t in board.tasks:
        header += [f"{t} ({'time' if board.basis is ScoreBasis.TIME else 'cost'})", "Score"]
    header.append("Overall Score")
    lines = [
        f"# Leaderboard ({board.phase.value}, {board.basis.value} basis)",
        "",
        f"Reference model: {board.reference_model}",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for card in board.entries:
        row = [card.model_name]
        for t in board.tasks:
            s = card.per_task[t]
            row += [_raw_cell(s.raw_value), f"{s.display:.2f}"]
        row.append(f"{card.overall_score:.2f}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


_HTML_PAGE = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Efficiency leaderboard ({phase}, {basis} basis)</title>
<style>
body {{ font-family: sans-serif; margin: 2rem; }}
table {{ border-collapse: collapse; }}
th, td {{ border: 1px solid #999; padding: 0.35rem 0.7rem; text-align: right; }}
th {{ background: #eee; }}
td:first-child, th:first-child {{ text-align: left; }}
caption {{ margin-bottom: 0.5rem; font-weight: bold; }}
</style>
</head>
<body>
<h1>Efficiency leaderboard</h1>
<p>Phase: {phase} &middot; basis: {basis} &middot; reference model: {reference}</p>
<table>
<thead><tr>{head}</tr></thead>
<tbody>
{rows}
</tbody>
</table>
</body>
</html>
"""


def render_html(board: Leaderboard) -> str:
    head = ["<th>Model</th>"]
    for t in board.tasks:
        head.append(f"<th>{html.escape(t)}</th><th>Score</th>")
    head.append("<th>Overall</th>")
    rows = []
    for card in board.entries:
        cells = [f"<td>{html.escape(card.model_name)}</td>"]
        for t in board.tasks:
            s = card.per_task[t]
            cells.append(f"<td>{_raw_cell(s.raw_value)}</td><td>{s.display:.2f}</td>")
        cells.append(f"<td>{card.overall_score:.2f}</td>")
        rows.append("<tr>" + "".join(cells) + "</tr>")
    return _HTML_PAGE.format(
        phase=board.phase.value,
        basis=board.basis.value,
        reference=html.escape(board.reference_model),
        head="".join(head),
        rows="\n".join(rows),
    )


def write_leaderboard(board: Leaderboard, out_dir: str | Path, stem: str = "leaderboard") -> List[Path]:
    """Write leaderboard.json, leaderboard.md and index.html into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    html_name = "index.html" if stem == "leaderboard" else f"{stem}.html"
    written = []
    for name, fmt in ((f"{stem}.json", "json"), (f"{stem}.md", "markdown"), (html_name, "html")):
        path = out / name
        path.write_text(render(board, fmt), encoding="utf-8")
        written.append(path)
    return written
