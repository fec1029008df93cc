import csv

import numpy as np
import pytest

from impmc.cli import main, read_run_config
from impmc.model import GroupModel


def _run(*argv):
    return main([str(a) for a in argv])


def _csv(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def forest(tmp_path):
    # tree a-x, a-y, b-x plus a separate edge c-z
    p = tmp_path / "forest.tsv"
    p.write_text("a\tx\t3\na\ty\t1\nb\tx\t3\nc\tz\t2\n", encoding="utf-8")
    q = tmp_path / "queries.tsv"
    q.write_text("a\tz\nb\tz\nc\tx\nc\ty\n", encoding="utf-8")
    return p, q


def test_init_toy(toy_file, tmp_path):
    out = tmp_path / "init"
    assert _run("init", toy_file, "--gu", 4, "--gv", 4, "--hard", "--out-dir", out) == 0
    model = GroupModel.load(out / "model.txt")
    assert model.w.shape == (4, 4, 5)
    model.validate()
    assert (out / "codebook_users.txt").exists() and (out / "run_config.txt").exists()


def test_init_rerun_byte_identical(toy_file, tmp_path):
    for name in ("a", "b"):
        assert _run("init", toy_file, "--gu", 2, "--gv", 2, "--seed", 5, "--out-dir", tmp_path / name) == 0
    assert (tmp_path / "a" / "model.txt").read_bytes() == (tmp_path / "b" / "model.txt").read_bytes()


def test_init_rejects_non_power_of_two(toy_file, tmp_path, capsys):
    assert _run("init", toy_file, "--gu", 3, "--out-dir", tmp_path / "x") == 1
    assert "target_groups must be a power of 2" in capsys.readouterr().err


def test_bad_file_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tx\t9\n", encoding="utf-8")
    assert _run("init", bad, "--out-dir", tmp_path / "o") == 1
    assert "bad.tsv:1" in capsys.readouterr().err


def test_train_single_iteration(toy_file, tmp_path):
    _run("init", toy_file, "--gu", 2, "--gv", 2, "--out-dir", tmp_path / "i")
    out = tmp_path / "t"
    assert _run("train", toy_file, "--model", tmp_path / "i" / "model.txt", "--max-iters", 1,
                "--tol", "inf", "--out-dir", out) == 0
    rows = _csv(out / "trace.csv")
    assert len(rows) == 1 and rows[0]["iteration"] == "1" and rows[0]["seconds"] == ""


def test_predict_matches_oracle_on_forest(forest, tmp_path):
    ratings, queries = forest
    _run("init", ratings, "--gu", 2, "--gv", 2, "--rmax", 5, "--out-dir", tmp_path / "i")
    model = tmp_path / "i" / "model.txt"
    common = ["--model", model, "--queries", queries, "--tol", "1e-14", "--max-iters", 30]
    assert _run("predict", ratings, *common, "--out-dir", tmp_path / "p") == 0
    assert _run("predict", ratings, *common, "--oracle", "--out-dir", tmp_path / "o") == 0
    a, b = _csv(tmp_path / "p" / "posteriors.csv"), _csv(tmp_path / "o" / "posteriors.csv")
    assert [(r["user_id"], r["movie_id"]) for r in a] == [("a", "z"), ("b", "z"), ("c", "x"), ("c", "y")]
    for ra, rb in zip(a, b):
        for k in ("p1", "p2", "p3", "p4", "p5"):
            assert abs(float(ra[k]) - float(rb[k])) < 1e-8
    pa = _csv(tmp_path / "p" / "predictions.csv")
    assert all(1.0 <= float(r["prediction"]) <= 5.0 for r in pa)


def test_predict_conditioned_matches_oracle_on_tree(forest, tmp_path):
    ratings, _ = forest
    queries = tmp_path / "tree_queries.tsv"
    # (b, y) lies on the path y - a - x - b
    queries.write_text("b\ty\na\tz\n", encoding="utf-8")
    _run("init", ratings, "--gu", 2, "--gv", 2, "--out-dir", tmp_path / "i")
    common = ["--model", tmp_path / "i" / "model.txt", "--queries", queries, "--tol", "1e-14"]
    assert _run("predict", ratings, *common, "--pairs", "conditioned", "--out-dir", tmp_path / "p") == 0
    assert _run("oracle", ratings, *common, "--out-dir", tmp_path / "o") == 0
    a, b = _csv(tmp_path / "p" / "posteriors.csv"), _csv(tmp_path / "o" / "posteriors.csv")
    assert len(a) == 2
    for ra, rb in zip(a, b):
        for k in ("p1", "p2", "p3", "p4", "p5"):
            assert abs(float(ra[k]) - float(rb[k])) < 1e-8


def test_predict_leakage_guard(forest, tmp_path, capsys):
    ratings, _ = forest
    _run("init", ratings, "--gu", 2, "--gv", 2, "--out-dir", tmp_path / "i")
    q = tmp_path / "leak.tsv"
    q.write_text("a\tx\n", encoding="utf-8")
    code = _run("predict", ratings, "--model", tmp_path / "i" / "model.txt", "--queries", q,
                "--out-dir", tmp_path / "p")
    assert code == 1 and "training set" in capsys.readouterr().err


def test_eval_perfect_predictions(toy_file, tmp_path):
    hold = tmp_path / "hold.tsv"
    hold.write_text("b\ty\t2\n", encoding="utf-8")
    preds = tmp_path / "perfect.csv"
    preds.write_text("user_id,movie_id,prediction\nb,y,2.0\n", encoding="utf-8")
    out = tmp_path / "e"
    assert _run("eval", toy_file, "--holdout", hold, "--predictions", f"perfect={preds}",
                "--methods", "movie_avg", "--out-dir", out) == 0
    rows = {r["method"]: r for r in _csv(out / "metrics.csv")}
    assert float(rows["perfect"]["rmse"]) == 0.0
    assert float(rows["movie_avg"]["rmse"]) == 1.0  # movie y has the single rating 1
    assert rows["perfect"]["n_holdout"] == "1"


def test_synth_point_mass(tmp_path):
    args = ["synth", "--n", 10, "--m", 10, "--g", 1, "--point-mass", 3, "--fixed-degree", 10]
    assert _run(*args, "--out-dir", tmp_path / "a") == 0
    assert _run(*args, "--out-dir", tmp_path / "b") == 0
    lines = (tmp_path / "a" / "ratings.tsv").read_text().splitlines()
    assert len(lines) == 100 and all(line.endswith("\t3") for line in lines)
    for f in ("ratings.tsv", "user_groups.tsv", "movie_groups.tsv", "model_true.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_degree_too_large(tmp_path):
    assert _run("synth", "--n", 10, "--m", 10, "--fixed-degree", 11, "--out-dir", tmp_path / "s") == 1


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert _run("synth", "--n", 80, "--m", 60, "--g", 2, "--fixed-degree", 12, "--seed", 3,
                "--out-dir", out) == 0
    return out


def test_sweep_counts_and_flag_isolation(synth_dir, tmp_path):
    base = ["sweep", synth_dir / "ratings.tsv", "--caps", "1,2", "--seeds", "1,2,3",
            "--methods", "movie_avg", "--holdout-size", 100]
    assert _run(*base, "--out-dir", tmp_path / "a") == 0
    assert _run(*base, "--update-w", "--out-dir", tmp_path / "b") == 0
    rows = _csv(tmp_path / "a" / "sweep.csv")
    assert len(rows) == 6 and len(_csv(tmp_path / "a" / "sweep_avg.csv")) == 2
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


@pytest.mark.parametrize("threads", [1, 8])
def test_rerun_byte_identical(synth_dir, tmp_path, threads):
    out = tmp_path / "sw"
    assert _run("sweep", synth_dir / "ratings.tsv", "--caps", "2,4", "--seeds", "1,2", "--gu", 2, "--gv", 2,
                "--holdout-size", 100, "--grid", "1x1,2x2", "--out-dir", out) == 0
    again = tmp_path / "again"
    assert _run("rerun", out / "run_config.txt", "--out-dir", again, "--threads", threads) == 0
    for f in ("sweep.csv", "sweep_avg.csv", "sweep_best.csv"):
        assert (out / f).read_bytes() == (again / f).read_bytes()
    assert read_run_config(again / "run_config.txt")["threads"] == threads


def test_train_rerun_byte_identical(synth_dir, tmp_path):
    ratings = synth_dir / "ratings.tsv"
    _run("init", ratings, "--gu", 2, "--gv", 2, "--out-dir", tmp_path / "i")
    out = tmp_path / "t"
    assert _run("train", ratings, "--model", tmp_path / "i" / "model.txt", "--max-iters", 5, "--tol", 0,
                "--update-w", "--out-dir", out) == 0
    again = tmp_path / "t8"
    assert _run("rerun", out / "run_config.txt", "--out-dir", again, "--threads", 8) == 0
    for f in ("trace.csv", "model_trained.txt"):
        assert (out / f).read_bytes() == (again / f).read_bytes()


def test_split_and_stats(synth_dir, tmp_path, capsys):
    ratings = synth_dir / "ratings.tsv"
    assert _run("split", ratings, "--cap", 3, "--holdout-size", 50, "--out-dir", tmp_path / "s") == 0
    assert len((tmp_path / "s" / "holdout.tsv").read_text().splitlines()) == 50
    assert _run("stats", ratings, "--out-dir", tmp_path / "st") == 0
    text = (tmp_path / "st" / "degree_stats.txt").read_text()
    assert text == capsys.readouterr().out
    assert "12" in text


@pytest.mark.slow
def test_imp_sweep_non_increasing(tmp_path):
    data = tmp_path / "d"
    assert _run("synth", "--n", 500, "--m", 500, "--g", 4, "--fixed-degree", 40, "--seed", 7,
                "--out-dir", data) == 0
    out = tmp_path / "sw"
    assert _run("sweep", data / "ratings.tsv", "--caps", "2,5,10,20", "--seeds", "1,2,3,4,5",
                "--methods", "imp", "--out-dir", out) == 0
    means = [float(r["rmse"]) for r in _csv(out / "sweep_avg.csv")]
    assert len(means) == 4
    assert all(b <= a + 0.02 for a, b in zip(means, means[1:])), means
    assert np.isfinite(means).all()
