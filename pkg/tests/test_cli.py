"""End-to-end command-line behavior: artifacts, exit codes, determinism."""

import json

import numpy as np
import pytest

from jtcr.cli import main
from jtcr.evaluation import recommend
from jtcr.model import load_checkpoint

from conftest import random_rows, write_checkin_file


@pytest.fixture
def data_file(tmp_path, rng):
    rows = random_rows(rng, n_users=6, n_pois=8, per_user=12)
    return write_checkin_file(tmp_path / "checkins.tsv", rows)


def run(*argv):
    return main([str(a) for a in argv])


TRAIN_FAST = ["--d", "2", "--gamma", "1e-3", "--max-iter", "2", "--epsilon", "1e-15",
              "--min-count", "3"]


# --- analyze ---------------------------------------------------------------------


def test_analyze_writes_tables_and_figures(tmp_path, data_file, capsys):
    out = tmp_path / "analysis"
    assert run("analyze", "--input", data_file, "--out-dir", out, "--min-count", "3") == 0
    for name in (
        "monthly_checkins.csv",
        "category_popularity.csv",
        "variance_extremes.csv",
        "user_checkin_split.csv",
        "correlations.json",
        "summary.json",
        "monthly_checkins.png",
        "category_popularity.png",
        "variance_extremes.png",
        "user_checkin_split.png",
        "manifest.jsonl",
    ):
        assert (out / name).exists(), name
    stdout = capsys.readouterr().out
    assert "density" in stdout and "multiple check-ins" in stdout
    summary = json.loads((out / "summary.json").read_text())
    assert summary["users"] == 6
    correlations = json.loads((out / "correlations.json").read_text())
    assert set(correlations) == {
        "user_variance_vs_quantity",
        "category_variance_vs_popularity",
        "checkins_vs_multiple_share",
    }


def test_analyze_no_plots_flag(tmp_path, data_file):
    out = tmp_path / "analysis"
    assert run("analyze", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--no-plots") == 0
    assert (out / "monthly_checkins.csv").exists()
    assert not (out / "monthly_checkins.png").exists()


def test_analyze_empty_after_filter(tmp_path, data_file):
    out = tmp_path / "analysis"
    code = run("analyze", "--input", data_file, "--out-dir", out, "--min-count", "1000")
    assert code == 2
    assert not out.exists() or not any(out.iterdir())


def test_analyze_missing_input(tmp_path):
    assert run("analyze", "--input", tmp_path / "nope.tsv", "--out-dir", tmp_path / "o") == 2


def test_usage_error_exit_code():
    assert run("analyze") == 1
    assert run("frobnicate") == 1


# --- train -----------------------------------------------------------------------


def test_train_writes_artifacts(tmp_path, data_file):
    out = tmp_path / "run"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST) == 0
    assert (out / "checkpoint.bin").exists()
    assert (out / "trace.csv").exists()
    assert (out / "trace.png").exists()
    assert (out / "manifest.jsonl").exists()
    manifest = [json.loads(line) for line in (out / "manifest.jsonl").read_text().splitlines()]
    assert manifest[-1]["command"] == "train"
    assert manifest[-1]["config"]["d"] == 2
    assert "checkpoint_sha256" in manifest[-1]


def test_train_single_iteration_trace(tmp_path, data_file):
    out = tmp_path / "run"
    assert run("train", "--input", data_file, "--out-dir", out, "--d", "2",
               "--max-iter", "1", "--min-count", "3") == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "t,theta,phase1,phase2,millis"
    assert len(lines) == 2
    assert lines[1].split(",")[-1] == "0"  # timing zeroed for reproducibility


def test_train_timing_flag(tmp_path, data_file):
    out = tmp_path / "run"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST, "--timing") == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert any(line.split(",")[-1] != "0" for line in lines[1:])


def test_train_nogeo_equals_joint_alpha_zero(tmp_path, data_file):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("train", "--input", data_file, "--out-dir", out1, *TRAIN_FAST,
               "--mode", "nogeo", "--alpha", "0.7", "--seed", "5") == 0
    assert run("train", "--input", data_file, "--out-dir", out2, *TRAIN_FAST,
               "--alpha", "0", "--seed", "5") == 0
    assert (out1 / "checkpoint.bin").read_bytes() != b""
    # byte-identical, not merely numerically close
    assert (out1 / "checkpoint.bin").read_bytes() == (out2 / "checkpoint.bin").read_bytes()


def test_train_multi_run_seeds(tmp_path, data_file):
    out = tmp_path / "runs"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
               "--runs", "3", "--seed", "10") == 0
    names = sorted(p.name for p in out.glob("run-*.checkpoint.bin"))
    assert names == ["run-000.checkpoint.bin", "run-001.checkpoint.bin", "run-002.checkpoint.bin"]
    seeds = [load_checkpoint(out / n).seed for n in names]
    assert seeds == [10, 11, 12]


def test_train_explicit_seed_list(tmp_path, data_file):
    out = tmp_path / "runs"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
               "--runs", "2", "--seeds", "3,9") == 0
    seeds = {load_checkpoint(p).seed for p in out.glob("run-*.checkpoint.bin")}
    assert seeds == {3, 9}
    bad = run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
              "--runs", "3", "--seeds", "1,2")
    assert bad == 2


def test_train_config_file_and_flag_precedence(tmp_path, data_file):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"d": 3, "gamma": 1e-3, "max_iter": 2,
                                    "epsilon": 1e-15, "seed": 3}))
    out = tmp_path / "run"
    assert run("train", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--config", cfg_path, "--d", "2", "--seed", "5") == 0
    manifest = [json.loads(line) for line in (out / "manifest.jsonl").read_text().splitlines()]
    assert manifest[-1]["config"]["d"] == 2          # flag wins
    assert manifest[-1]["config"]["gamma"] == 1e-3   # file fills the rest
    assert load_checkpoint(out / "checkpoint.bin").seed == 5  # flag seed beats file seed


def test_train_divergence_exit_code(tmp_path, data_file):
    out = tmp_path / "run"
    code = run("train", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--d", "4", "--gamma", "1e9", "--max-iter", "50", "--epsilon", "1e-18")
    assert code == 3


def test_train_jtcr_threads_env(tmp_path, data_file, monkeypatch):
    monkeypatch.setenv("JTCR_THREADS", "2")
    out = tmp_path / "runs"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
               "--runs", "2", "--seed", "0") == 0
    sequential = tmp_path / "seq"
    monkeypatch.setenv("JTCR_THREADS", "1")
    assert run("train", "--input", data_file, "--out-dir", sequential, *TRAIN_FAST,
               "--runs", "2", "--seed", "0") == 0
    for name in ("run-000.checkpoint.bin", "run-001.checkpoint.bin"):
        assert (out / name).read_bytes() == (sequential / name).read_bytes()


# --- evaluate ---------------------------------------------------------------------


def _trained_checkpoint(tmp_path, data_file, seed=0):
    out = tmp_path / f"train-{seed}"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
               "--seed", seed) == 0
    return out / "checkpoint.bin"


def test_evaluate_identical_checkpoints_zero_std(tmp_path, data_file):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    out = tmp_path / "eval"
    assert run("evaluate", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--checkpoints", ckpt, ckpt, ckpt, ckpt, ckpt) == 0
    report = json.loads((out / "eval-report.json").read_text())
    assert all(v == 0.0 for v in report["std"].values())
    assert (out / "eval-metrics.png").exists()


def test_evaluate_k_projection(tmp_path, data_file, capsys):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    out = tmp_path / "eval"
    assert run("evaluate", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--checkpoints", ckpt, "--k", "5") == 0
    report = json.loads((out / "eval-report.json").read_text())
    assert set(report["mean"]) == {"prec@5", "ndcg@5"}
    assert "@5" in capsys.readouterr().out


def test_evaluate_perfect_fixture(tmp_path):
    # one user, clear time ordering; craft a checkpoint that ranks the test
    # POIs ideally (rel-sorted) ahead of everything else
    from jtcr.data import build_interactions, chronological_split, parse_checkins
    from jtcr.evaluation import relevance_labels
    from jtcr.model import LatentModel, save_checkpoint

    rows = []
    for j in range(10):
        rows.append(("u1", f"p{j}", 1280000000 + j * 100, 1.0 + j / 100, 2.0, "c"))
    rows.append(("u1", "p9", 1280000000 + 2000, 1.09, 2.0, "c"))  # test-split multiple visit
    path = write_checkin_file(tmp_path / "tiny.tsv", rows)
    ds = parse_checkins(path)
    split = chronological_split(ds)
    labels = relevance_labels(split.test)[0]
    model = LatentModel(np.ones((1, 1)), np.zeros((1, ds.n_pois)), alpha=0.0)
    for j, rel in labels.items():
        model.v[0, j] = 5.0 + rel
    ckpt_path = tmp_path / "ideal.bin"
    save_checkpoint(ckpt_path, model, ds.user_ids, ds.poi_ids, 1e-4, 0)
    out = tmp_path / "eval"
    assert run("evaluate", "--input", path, "--out-dir", out, "--min-count", "1",
               "--checkpoints", ckpt_path, "--k", "5") == 0
    report = json.loads((out / "eval-report.json").read_text())
    assert report["mean"]["ndcg@5"] == pytest.approx(1.0)


def test_evaluate_include_train_pois_flag(tmp_path, data_file):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert run("evaluate", "--input", data_file, "--out-dir", out1, "--min-count", "3",
               "--checkpoints", ckpt, "--no-plots") == 0
    assert run("evaluate", "--input", data_file, "--out-dir", out2, "--min-count", "3",
               "--checkpoints", ckpt, "--include-train-pois", "--no-plots") == 0
    r1 = json.loads((out1 / "eval-report.json").read_text())
    r2 = json.loads((out2 / "eval-report.json").read_text())
    assert r1["metadata"]["include_train_pois"] is False
    assert r2["metadata"]["include_train_pois"] is True


def test_no_temp_files_left_behind(tmp_path, data_file):
    out = tmp_path / "run"
    assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST) == 0
    assert run("evaluate", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--checkpoints", out / "checkpoint.bin") == 0
    assert not list(out.glob("*.tmp"))


def test_analyze_summary_matches_library_queries(tmp_path, data_file):
    from jtcr.data import filter_min_activity, parse_checkins
    from jtcr.temporal import dataset_summary

    out = tmp_path / "analysis"
    assert run("analyze", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--no-plots") == 0
    summary = json.loads((out / "summary.json").read_text())
    want = dataset_summary(filter_min_activity(parse_checkins(data_file), 3))
    assert summary == want


def test_evaluate_per_user_dump(tmp_path, data_file):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    out = tmp_path / "eval"
    assert run("evaluate", "--input", data_file, "--out-dir", out, "--min-count", "3",
               "--checkpoints", ckpt, "--per-user") == 0
    lines = (out / "eval-per-user.csv").read_text().splitlines()
    assert lines[0].startswith("run,user_id,prec@5")
    assert len(lines) > 1


def test_evaluate_mismatched_checkpoint(tmp_path, data_file, rng, capsys):
    other_rows = random_rows(np.random.default_rng(99), n_users=4, n_pois=5, per_user=8)
    other_file = write_checkin_file(tmp_path / "other.tsv", other_rows)
    ckpt = _trained_checkpoint(tmp_path, data_file)
    out = tmp_path / "eval"
    code = run("evaluate", "--input", other_file, "--out-dir", out, "--min-count", "3",
               "--checkpoints", ckpt)
    assert code == 2
    assert "id maps" in capsys.readouterr().err


# --- recommend ---------------------------------------------------------------------


def test_recommend_top1(tmp_path, data_file, capsys):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    capsys.readouterr()  # drop the training output
    assert run("recommend", "--input", data_file, "--min-count", "3",
               "--checkpoint", ckpt, "--users", "u0", "--k", "1") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    user, rank, poi, score_repr = lines[0].split("\t")
    assert user == "u0" and rank == "1"
    float(score_repr)


def test_recommend_unknown_users_only(tmp_path, data_file, capsys):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    code = run("recommend", "--input", data_file, "--min-count", "3",
               "--checkpoint", ckpt, "--users", "ghost1,ghost2", "--k", "2")
    assert code == 2
    assert "unknown user" in capsys.readouterr().err


def test_recommend_mixed_users_serves_known(tmp_path, data_file, capsys):
    ckpt = _trained_checkpoint(tmp_path, data_file)
    capsys.readouterr()
    assert run("recommend", "--input", data_file, "--min-count", "3",
               "--checkpoint", ckpt, "--users", "ghost,u1", "--k", "2") == 0
    captured = capsys.readouterr()
    assert "unknown user" in captured.err
    assert all(line.split("\t")[0] == "u1" for line in captured.out.strip().splitlines())


def test_recommend_matches_library_oracle(tmp_path, data_file, capsys):
    from jtcr.data import build_interactions, chronological_split, filter_min_activity, parse_checkins

    ckpt_path = _trained_checkpoint(tmp_path, data_file)
    capsys.readouterr()
    assert run("recommend", "--input", data_file, "--min-count", "3",
               "--checkpoint", ckpt_path, "--users", "u2", "--k", "4") == 0
    printed = [line.split("\t")[2] for line in capsys.readouterr().out.strip().splitlines()]

    ds = filter_min_activity(parse_checkins(data_file), 3)
    split = chronological_split(ds)
    store = build_interactions(split.train)
    ckpt = load_checkpoint(ckpt_path)
    want = recommend(ckpt.model, ds.user_index["u2"], store, 4)
    assert printed == [ds.poi_ids[j] for j in want]


# --- end-to-end determinism ----------------------------------------------------------


def test_end_to_end_determinism(tmp_path, data_file):
    # identical arguments twice, including the out dir; snapshot between runs
    out = tmp_path / "run"
    snapshots = []
    for _ in range(2):
        assert run("train", "--input", data_file, "--out-dir", out, *TRAIN_FAST,
                   "--seed", "21") == 0
        assert run("evaluate", "--input", data_file, "--out-dir", out, "--min-count", "3",
                   "--checkpoints", out / "checkpoint.bin", "--no-plots") == 0
        snapshots.append({
            name: (out / name).read_bytes()
            for name in ("checkpoint.bin", "trace.csv", "eval-report.json")
        })
    assert snapshots[0] == snapshots[1]
