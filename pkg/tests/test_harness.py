import json
import math

import numpy as np
import pytest

from ctrlopt import cli, training
from ctrlopt.config import ConfigError, RunConfig, load_config, load_taskset
from ctrlopt.experiments import PRESETS, UnknownPresetError, run_ablation, run_pareto_analysis
from ctrlopt.logs import read_logs
from ctrlopt.policy import TabularPolicy
from ctrlopt.training import TrainingError, beam_evaluation, log_columns, run_training


def quick(**kw):
    base = dict(seed=0, task_file="builtin:conflict", max_steps=3, rollout_batch=4, eval_samples=16, beam_width=4)
    base.update(kw)
    return RunConfig(**base)


def strip_wall(path):
    rows = read_logs(path)
    for r in rows:
        r.pop("wall_time")
    return rows


# --- config ------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(seed=None),
        dict(seed=1.5),
        dict(algorithm="ppo"),
        dict(aggregation="median"),
        dict(algorithm="gdpo", aggregation="geometric_mean"),
        dict(group_size=1),
        dict(epochs=0),
        dict(rollout_batch=0),
        dict(minibatches=5, rollout_batch=4),
        dict(ratio_level="batch"),
        dict(task_file=""),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        quick(**kw)


@pytest.mark.parametrize(
    "alg, agg, mode",
    [
        ("grpo", "arithmetic_mean", "grpo"),
        ("gdpo", "lse_softmin", "gdpo_lse"),
        ("gdpo", "arithmetic_mean", "gdpo_sum_bn"),
    ],
)
def test_advantage_mode(alg, agg, mode):
    assert quick(algorithm=alg, aggregation=agg).advantage_mode == mode


def test_load_config(tmp_path):
    (tmp_path / "t.yaml").write_text("name: t\nsources: [ABC]\nproperties:\n  - {name: a, direction: 1, delta: 0.1, theta: 0.9, oracle: frac_A}\n")
    (tmp_path / "c.yaml").write_text("task_file: t.yaml\nalgorithm: gdpo\naggregation: lse_softmin\n")
    cfg = load_config(tmp_path / "c.yaml", seed=4, max_steps=7)
    assert cfg.seed == 4 and cfg.max_steps == 7
    assert cfg.task_file == str(tmp_path / "t.yaml")
    assert cfg.load_tasks().tasks[0].improve_set == {"a"}
    with pytest.raises(ConfigError, match="seed"):
        load_config(tmp_path / "c.yaml")
    (tmp_path / "bad.yaml").write_text("seed: 1\ntask_file: t.yaml\nlr: 3\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_config(tmp_path / "bad.yaml")


def test_builtin_tasks_load():
    for name in ("conflict", "scale", "cooperative", "benchmark"):
        ts = load_taskset(f"builtin:{name}")
        assert ts.tasks and ts.max_len == 10
    with pytest.raises(ConfigError):
        load_taskset("builtin:missing")


def test_benchmark_margins():
    ts = load_taskset("builtin:benchmark")
    t = ts.tasks[0]
    # benchmark margins/thresholds: QED theta 0.9 delta 0.1, hERG theta 0.3 delta 0.2, PlogP delta 1.0
    assert (t.spec("QED").theta, t.spec("QED").delta) == (0.9, 0.1)
    assert (t.spec("hERG").theta, t.spec("hERG").delta, t.spec("hERG").direction) == (0.3, 0.2, -1)
    assert t.spec("PlogP").delta == 1.0


def test_example_config_file_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "conflict.yaml", seed=0)
    assert cfg.resolved()["task_file"] == "builtin:conflict"


# --- training ----------------------------------------------------------------


def test_zero_steps_is_baseline(tmp_path):
    cfg = quick(max_steps=0)
    res = run_training(cfg, tmp_path)
    fresh = TabularPolicy(res.policy.vocab)
    assert np.array_equal(res.policy.logits, fresh.logits)
    assert res.beam == beam_evaluation(fresh, cfg.load_tasks(), cfg)
    assert read_logs(tmp_path / "train_log.tsv") == []


def test_run_writes_config_log_policy_metrics(tmp_path):
    cfg = quick()
    run_training(cfg, tmp_path)
    echo = json.loads((tmp_path / "config.json").read_text())
    assert echo["learning_rate"] == cfg.learning_rate and echo["kl_target"] == 1.0
    rows = read_logs(tmp_path / "train_log.tsv")
    assert [r["step"] for r in rows] == [0, 1, 2]
    assert list(rows[0]) == log_columns(cfg.load_tasks())
    TabularPolicy.load(tmp_path / "policy.txt")
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert {"sor", "ssor", "sim", "ri", "n"} <= set(m)


@pytest.mark.parametrize("preset", ["grpo_am", "gdpo_am", "gdpo_lse"])
def test_same_seed_same_log(tmp_path, preset):
    from ctrlopt.experiments import preset_config

    cfg = preset_config(preset, 3, quick(minibatches=2))
    run_training(cfg, tmp_path / "a")
    run_training(cfg, tmp_path / "b")
    assert strip_wall(tmp_path / "a" / "train_log.tsv") == strip_wall(tmp_path / "b" / "train_log.tsv")
    assert (tmp_path / "a" / "policy.txt").read_bytes() == (tmp_path / "b" / "policy.txt").read_bytes()


def test_rerun_overwrites_log(tmp_path):
    run_training(quick(), tmp_path)
    run_training(quick(), tmp_path)
    assert len(read_logs(tmp_path / "train_log.tsv")) == 3


def test_non_finite_loss_writes_diagnostic(tmp_path, monkeypatch):
    real = training.policy_loss

    def poisoned(*a, **k):
        loss, grad, stats = real(*a, **k)
        return float("nan"), grad, stats

    monkeypatch.setattr(training, "policy_loss", poisoned)
    with pytest.raises(TrainingError, match="non-finite"):
        run_training(quick(), tmp_path)
    rows = read_logs(tmp_path / "train_log.tsv")
    assert len(rows) == 1 and rows[0]["step"] == 0 and math.isnan(rows[0]["loss"])


def test_gm_training_raises_mean_reward():
    for seed in range(3):
        res = run_training(RunConfig(seed=seed, task_file="builtin:conflict", sigmoid_align=False), write=False)
        assert res.final_reward > res.initial_reward


# --- experiments -------------------------------------------------------------


def test_ablation_schema_and_files(tmp_path):
    rows = run_ablation(list(PRESETS), [0], tmp_path, quick(max_steps=1))
    assert len(rows) == len(PRESETS)
    assert len({tuple(r) for r in rows}) == 1  # identical columns for every preset
    assert (tmp_path / "grpo_gm" / "seed0" / "train_log.tsv").exists()
    table = read_logs(tmp_path / "ablation.tsv")
    assert [r["preset"] for r in table] == list(PRESETS)


def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        run_ablation(["grpo_xx"], [0])


def test_cooperative_sanity_floor():
    rows = run_ablation(list(PRESETS), [0], base=RunConfig(seed=0, task_file="builtin:cooperative"))
    am = {r["preset"]: r["sampled_sor"] for r in rows}
    for p in PRESETS:
        assert am[p] >= min(am["grpo_am"], am["gdpo_am"])


def test_pareto_analysis(tmp_path):
    rows = run_pareto_analysis("power2", tmp_path)
    where = {r["aggregator"]: r["location"] for r in rows}
    assert where["arithmetic_mean"] == "boundary" and where["geometric_mean"] == "interior"
    summary = read_logs(tmp_path / "summary.tsv")
    assert summary[0]["front"] == "power2"
    contour = read_logs(tmp_path / "contour_geometric_mean.tsv")
    assert len(contour) == 100 * 100
    assert all(abs(r["value"] - (r["x"] * r["y"]) ** 0.5) < 1e-8 for r in contour[::97])
    lin = run_pareto_analysis("linear", tmp_path / "lin")
    gm = next(r for r in lin if r["aggregator"] == "geometric_mean")
    assert (gm["r1"], gm["r2"]) == (0.5, 0.5)
    with pytest.raises(KeyError):
        run_pareto_analysis("spiral", tmp_path)


# --- cli ---------------------------------------------------------------------


def test_seed_list():
    assert cli._seed_list("0,1,2") == [0, 1, 2]
    assert cli._seed_list("3-5,9") == [3, 4, 5, 9]


def test_cli_round_trip(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("task_file: builtin:conflict\nrollout_batch: 4\neval_samples: 16\nbeam_width: 4\n")
    assert cli.main(["train", "--config", str(cfg), "--seed", "1", "--steps", "2", "--out", str(tmp_path / "run")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["beam"]["n"] == 1
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "run" / "policy.txt"), "--task", "builtin:conflict", "--samples", "16"]) == 0
    assert "band_violation" in capsys.readouterr().out
    assert cli.main(["pareto", "--front", "family", "--out", str(tmp_path / "p")]) == 0
    assert "interior" in capsys.readouterr().out
    assert cli.main(["ablate", "--preset", "grpo_am,gdpo_lse", "--seeds", "0", "--steps", "1", "--out", str(tmp_path / "ab")]) == 0
    assert cli.main(["ablate", "--preset", "nope", "--seeds", "0"]) == 2
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing"), "--task", "builtin:conflict"]) == 2


def test_cli_requires_seed(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["train", "--config", "x.yaml"])
