"""Command line interface.

Exit codes: 0 success, 2 config error, 3 one or more sessions aborted,
4 internal error. `validate` exits 1 when the submission fails its checks.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .config import BenchmarkConfig, default_config, load_config
from .errors import BenchmarkError, ConfigError
from .leaderboard import build_leaderboard, load_submission, render, validate_submission
from .orchestrator import (
    EXIT_CONFIG,
    EXIT_INTERNAL,
    EXIT_OK,
    load_run,
    run_benchmark,
    score_runs,
    write_scored_leaderboards,
)
from .simtrainer import load_sim_config, run_sim_pretrain, run_trainer_process
from .types import Phase, ScoreBasis


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effbench",
        description="Meter how long (and how much money) trainers need to reach "
        "task cutoffs, and score them against a reference model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="benchmark one model across the configured tasks")
    run_p.add_argument("--config", required=True, help="benchmark config JSON")
    run_p.add_argument(
        "--trainer",
        required=True,
        help="trainer command template; {task}, {phase}, {config} are substituted",
    )
    run_p.add_argument(
        "--phases",
        default="finetune",
        help="comma-separated subset of pretrain,finetune,inference (default finetune)",
    )
    run_p.add_argument("--out", default=None, help="directory for run artifacts")
    run_p.add_argument("--clock", choices=("monotonic", "simulated"), default=None)
    run_p.add_argument("--parallel", type=int, default=1, help="simulated-clock only")
    run_p.add_argument("--sim-pretrain", default=None, help="sim params file for the pretrain phase")

    score_p = sub.add_parser("score", help="recompute scorecards and leaderboards from run dirs")
    score_p.add_argument("--results", required=True, nargs="+", help="one or more run directories")
    score_p.add_argument("--out", default=None, help="where to write leaderboards (default: first results dir)")

    val_p = sub.add_parser("validate", help="validate a submission bundle")
    val_p.add_argument("--submission", required=True, help="submission directory or .zip")
    val_p.add_argument("--config", default=None, help="benchmark config (default: shipped)")

    lb_p = sub.add_parser("leaderboard", help="render a leaderboard from run dirs")
    lb_p.add_argument("--results", required=True, nargs="+")
    lb_p.add_argument("--format", default="md", choices=("json", "md", "markdown", "html"))
    lb_p.add_argument("--phase", default="finetune", choices=[p.value for p in Phase])
    lb_p.add_argument("--basis", default="time", choices=[b.value for b in ScoreBasis])
    lb_p.add_argument("--out", default=None, help="also write the full leaderboard file set here")

    sim_p = sub.add_parser("sim-trainer", help="run a simulated trainer over stdio")
    sim_p.add_argument("--params", required=True, help="sim params JSON")
    sim_p.add_argument("--phase", default="finetune", choices=("finetune", "inference"))

    pre_p = sub.add_parser("pretrain", help="run the checkpoint-clone pretraining simulation")
    pre_p.add_argument("--params", required=True, help="sim params JSON with a 'pretrain' section")
    pre_p.add_argument("--config", default=None, help="benchmark config (default: shipped)")

    return parser


def _load_config_arg(path: Optional[str]) -> BenchmarkConfig:
    return load_config(path) if path else default_config()


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    try:
        phases = tuple(Phase(p.strip()) for p in args.phases.split(",") if p.strip())
    except ValueError as e:
        raise ConfigError(f"bad --phases value: {e}")
    if not phases:
        raise ConfigError("no phases requested")
    bundle = run_benchmark(
        config,
        args.trainer,
        phases=phases,
        out_dir=args.out,
        config_path=args.config,
        clock_mode=args.clock,
        parallel=args.parallel,
        pretrain_params_path=args.sim_pretrain,
    )
    for phase, task_records in bundle.records.items():
        for name, rec in task_records.items():
            line = f"{phase.value}/{name}: {rec.result.status.value}"
            if rec.result.status.value == "reached":
                if rec.result.latency_ms is not None:
                    line += f" latency={rec.result.latency_ms:.4f}ms"
                else:
                    line += f" metered={rec.result.metered_seconds:.4f}s"
            if rec.diagnostic:
                line += f" ({rec.diagnostic})"
            print(line)
    if bundle.pretrain is not None:
        record = bundle.pretrain
        print(
            f"pretrain: {record.status.value}"
            + (f" qualifying_step={record.qualifying_step}" if record.qualifying_step else "")
            + f" metered={record.metered_seconds:g}s"
        )
    if bundle.out_dir:
        print(f"artifacts written to {bundle.out_dir}")
    return bundle.exit_code


def _cmd_score(args: argparse.Namespace) -> int:
    runs = [load_run(d) for d in args.results]
    cards = score_runs(runs)
    if not cards:
        raise ConfigError(
            "no scorecards could be built: configure a reference_baseline or "
            "include the reference model's run directory"
        )
    out = Path(args.out or args.results[0])
    written = write_scored_leaderboards(cards, runs[0].config, out)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config_arg(args.config)
    record = load_submission(args.submission)
    report = validate_submission(record, config)
    for check in report.checks:
        print(check.describe())
    for task, pct in sorted(report.coverage.items()):
        print(f"coverage [{task}]: {pct:g}% of dev set")
    print("RESULT:", "pass" if report.passed else "fail")
    return 0 if report.passed else 1


def _cmd_leaderboard(args: argparse.Namespace) -> int:
    runs = [load_run(d) for d in args.results]
    cards = score_runs(runs)
    key = (Phase(args.phase), ScoreBasis(args.basis))
    if key not in cards:
        raise ConfigError(
            f"no scorecards for phase={args.phase}, basis={args.basis} "
            "(is a reference baseline configured or a reference run included?)"
        )
    config = runs[0].config
    board = build_leaderboard(
        cards[key],
        tasks=config.task_names,
        reference_model=config.reference_model,
        basis=key[1],
        phase=key[0],
    )
    print(render(board, args.format), end="")
    if args.out:
        write_scored_leaderboards(cards, config, Path(args.out))
    return EXIT_OK


def _cmd_sim_trainer(args: argparse.Namespace) -> int:
    return run_trainer_process(args.params, Phase(args.phase))


def _cmd_pretrain(args: argparse.Namespace) -> int:
    config = _load_config_arg(args.config)
    sim_cfg = load_sim_config(args.params)
    if sim_cfg.pretrain is None:
        raise ConfigError(f"{args.params}: no 'pretrain' section")
    record = run_sim_pretrain(sim_cfg.pretrain, config.tasks, config.eval_interval_seconds)
    print(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "score": _cmd_score,
    "validate": _cmd_validate,
    "leaderboard": _cmd_leaderboard,
    "sim-trainer": _cmd_sim_trainer,
    "pretrain": _cmd_pretrain,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BenchmarkError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
