import csv

import numpy as np
import pytest

from madlearn import cli, dataset as D
from madlearn.environments import cliffwalking


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def manifest(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


TINY = ["--set", "train.steps=20", "--set", "train.eval_interval=10", "--set", "train.hidden=16,16",
        "--set", "train.latent_dim=4", "--set", "train.batch_obj=16", "--set", "train.batch_constraint=16",
        "--set", "data.n_trajectories=5", "--set", "data.max_len=30", "--set", "eval.n_pairs=500"]


def test_collect_is_reproducible(tmp_path):
    assert run("collect", "--seed", 3, "--out", tmp_path / "a", "--set", "data.n_trajectories=7") == 0
    assert run("collect", "--seed", 3, "--out", tmp_path / "b", "--set", "data.n_trajectories=7") == 0
    a, b = (tmp_path / d / "dataset.txt" for d in "ab")
    assert a.read_bytes() == b.read_bytes()
    assert manifest(tmp_path / "a" / "manifest.txt")["trajectories"] == "7"
    assert len(D.load(a)) == 7


def test_train_writes_metrics_and_checkpoint(tmp_path):
    out = tmp_path / "t"
    assert run("train", "--seed", 0, "--out", out, *TINY) == 0
    table = rows(out / "metrics.csv")
    assert list(table[0]) == list(cli.METRIC_COLUMNS)
    assert [r["step"] for r in table] == ["0", "10", "20"]
    assert (out / "checkpoint.bin").exists()
    cfg = cli.parse_config_text((out / "config.txt").read_text())
    assert cfg["train.steps"] == "20" and cfg["seed"] == "0"


def test_train_and_eval_are_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("train", "--seed", 1, "--out", tmp_path / d, *TINY) == 0
        assert run("eval", "--seed", 1, "--out", tmp_path / d / "ev",
                   "--checkpoint", tmp_path / d / "checkpoint.bin", "--set", "eval.n_pairs=500") == 0
    for name in ("metrics.csv", "checkpoint.bin", "ev/eval.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the echoed configs differ only in the output directory
    a, b = (cli.parse_config_text((tmp_path / d / "config.txt").read_text()) for d in "ab")
    assert {k: v for k, v in a.items() if k != "out"} == {k: v for k, v in b.items() if k != "out"}


def test_eval_with_oracle_is_perfect(tmp_path):
    assert run("eval", "--seed", 0, "--out", tmp_path, "--set", "eval.metric=oracle") == 0
    (r,) = rows(tmp_path / "eval.csv")
    assert float(r["spearman"]) == pytest.approx(1.0)
    assert float(r["pearson"]) == pytest.approx(1.0)
    assert float(r["ratio_cv"]) == pytest.approx(0.0, abs=1e-12)


def test_gt_tables(tmp_path):
    assert run("gt", "--seed", 0, "--out", tmp_path / "c") == 0
    env = cliffwalking()
    table = {(int(r["state_id_from"]), int(r["state_id_to"])): r["distance"] for r in rows(tmp_path / "c" / "ground_truth.csv")}
    assert table[(env.start, env.goal)] == "13"
    assert all(table[(i, i)] == "0" for i in range(env.n_states))
    assert run("gt", "--seed", 0, "--env", "keydoor", "--out", tmp_path / "k") == 0
    assert "INF" in (tmp_path / "k" / "ground_truth.csv").read_text()


def test_plan_summary_and_traces(tmp_path):
    assert run("plan", "--seed", 0, "--out", tmp_path, "--set", "plan.metric=oracle",
               "--set", "plan.episodes=3", "--set", "plan.horizon=3") == 0
    (s,) = rows(tmp_path / "summary.csv")
    assert list(s) == list(cli.SUMMARY_COLUMNS)
    assert s["episodes"] == "3" and float(s["success_rate"]) == 1.0
    traces = sorted((tmp_path / "traces").iterdir())
    assert [p.name for p in traces] == [f"episode_{k:04d}.csv" for k in range(3)]
    lengths = [len(rows(p)) for p in traces]
    assert float(s["mean_steps_success"]) == pytest.approx(np.mean(lengths))


def test_sweep_emits_one_run_per_value(tmp_path):
    assert run("sweep", "--seed", 0, "--out", tmp_path, *TINY, "--set", "sweep.values=2,4") == 0
    for v in ("2", "4"):
        assert (tmp_path / f"latent_dim={v}" / "metrics.csv").exists()
    assert [r["value"] for r in rows(tmp_path / "sweep.csv")] == ["2", "4"]


def test_config_file_and_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# grid\n[data]\nn_trajectories = 4\nmax_len = 12\n")
    out = tmp_path / "o"
    assert run("collect", "--seed", 0, "--out", out, "--config", conf, "--set", "data.max_len=9") == 0
    cfg = cli.parse_config_text((out / "config.txt").read_text())
    assert cfg["data.n_trajectories"] == "4" and cfg["data.max_len"] == "9"
    assert all(len(t) <= 9 for t in D.load(out / "dataset.txt").trajectories)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MAD_SEED", "3")
    assert run("collect", "--out", tmp_path / "env", "--set", "data.n_trajectories=2") == 0
    monkeypatch.delenv("MAD_SEED")
    assert run("collect", "--seed", 3, "--out", tmp_path / "flag", "--set", "data.n_trajectories=2") == 0
    assert (tmp_path / "env" / "dataset.txt").read_bytes() == (tmp_path / "flag" / "dataset.txt").read_bytes()


def test_config_errors_exit_two(tmp_path, monkeypatch):
    monkeypatch.delenv("MAD_SEED", raising=False)
    assert run("collect", "--out", tmp_path) == 2  # no seed anywhere
    assert run("collect", "--seed", 0, "--out", tmp_path, "--set", "train.bogus=1") == 2
    assert run("collect", "--seed", 0, "--out", tmp_path, "--env", "antmaze") == 2
    assert run("eval", "--seed", 0, "--out", tmp_path) == 2  # learned metric without checkpoint


def test_io_errors_exit_four(tmp_path):
    assert run("eval", "--seed", 0, "--out", tmp_path, "--checkpoint", tmp_path / "missing.bin") == 4
    bad = tmp_path / "bad.txt"
    bad.write_text("NOPE\n")
    assert run("train", "--seed", 0, "--out", tmp_path / "t", "--set", f"data.path={bad}", *TINY) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_three(tmp_path):
    env = cliffwalking()
    data = D.collect(env, 3, 20, seed=0)
    huge = D.TrajectoryDataset(data.env_name, data.obs_dim, data.seed,
                               [D.Trajectory(t.observations * 1e300, t.latent) for t in data.trajectories])
    path = tmp_path / "huge.txt"
    huge.save(path)
    assert run("train", "--seed", 0, "--out", tmp_path / "t", "--set", f"data.path={path}", *TINY) == 3


def test_parse_config_text_rejects_garbage():
    with pytest.raises(cli.ConfigError):
        cli.parse_config_text("just words\n")
    assert cli.parse_config_text("[a]\nb = 1 # note\n") == {"a.b": "1"}
