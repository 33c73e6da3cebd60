import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from effbench.config import parse_config
from effbench.types import MetricKind, TaskSpec

SIM_TRAINER_CMD = f"{sys.executable} -m effbench sim-trainer --params {{params}} --phase {{phase}}"


def make_task(
    name="sst2", metric_kind=MetricKind.ACCURACY, cutoff=90.0, epoch_budget=5, dev_size=872
) -> TaskSpec:
    return TaskSpec(
        name=name, metric_kind=metric_kind, cutoff=cutoff, epoch_budget=epoch_budget, dev_size=dev_size
    )


@pytest.fixture
def write_sim_params(tmp_path):
    """Factory writing a sim-trainer params file; returns its path."""

    def _write(name, task: TaskSpec, *, model="curvebot", m_inf=95.0, tau=30.0,
               noise_sigma=0.0, seed=7, sim_speedup=1_000_000.0, seconds_per_epoch=60.0,
               eval_interval=10.0, eval_duration=1.0, predictions=True,
               per_instance_ms=None, fault=None, pretrain=None):
        params = {
            "model_name": model,
            "task": {
                "name": task.name,
                "metric_kind": task.metric_kind.value,
                "cutoff": task.cutoff,
                "epoch_budget": task.epoch_budget,
                "train_size": task.train_size,
                "dev_size": task.dev_size,
            },
            "curve": {
                "m_inf": m_inf,
                "tau": tau,
                "noise_sigma": noise_sigma,
                "seed": seed,
                "sim_speedup": sim_speedup,
            },
            "seconds_per_epoch": seconds_per_epoch,
            "eval_interval_seconds": eval_interval,
            "eval_duration_seconds": eval_duration,
        }
        if predictions:
            params["predictions_dir"] = str(tmp_path / "sim-preds" / task.name)
        if per_instance_ms is not None:
            params["inference"] = {"per_instance_ms": per_instance_ms}
        if fault is not None:
            params["fault"] = fault
        if pretrain is not None:
            params["pretrain"] = pretrain
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(params, indent=2), encoding="utf-8")
        return path

    return _write


def three_task_config_dict(**overrides):
    """A small three-task benchmark config as a plain JSON tree."""
    data = {
        "tasks": [
            {"name": "alpha", "metric_kind": "entity_f1", "cutoff": 91.0, "dev_size": 3250},
            {"name": "beta", "metric_kind": "mnli_avg_accuracy", "cutoff": 85.0, "dev_size": 4000},
            {"name": "gamma", "metric_kind": "accuracy", "cutoff": 90.0, "dev_size": 872},
        ],
        "reference_model": "refnet",
        "eval_interval_seconds": 10.0,
        "seed": 7,
        "clock": "simulated",
        "idle_timeout_seconds": 30.0,
    }
    data.update(overrides)
    return data


@pytest.fixture
def three_task_config():
    return parse_config(three_task_config_dict())
