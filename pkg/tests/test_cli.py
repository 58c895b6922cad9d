import csv
import os
import time

import numpy as np
import pytest

from bipcl.cli import KEYS, ExitCode, main, resolve_config, ConfigError
from bipcl.data import write_interactions
from bipcl.evaluation import read_density, read_report
from bipcl.synthetic import multi_intent

SMALL = {
    "model.d": 8, "model.K": 4, "model.T": 8, "model.heads": 2, "train.batch_size": 64,
    "train.epochs_max": 2, "loss.n_negatives": 5, "loss.lambda": 1.0,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    log = multi_intent(n_users=120, n_items=60, min_len=6, max_len=12, seed=0)
    data = root / "log.tsv"
    write_interactions(log.records(), data)
    cfg = root / "small.cfg"
    lines = [f"data.input = {data}", f"run.root = {root / 'runs'}"] + [f"{k} = {v}" for k, v in SMALL.items()]
    cfg.write_text("# desk-sized smoke configuration\n" + "\n".join(lines) + "\n")
    return root, cfg


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _run_dir(out):
    return [ln.split("\t")[1] for ln in out.splitlines() if ln.startswith("run_dir\t")][-1]


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg = workspace
    run_dir = str(root / "trained")
    assert main(["train", "--config", str(cfg), "--run-dir", run_dir, "-q"]) == 0
    return run_dir


def test_help_lists_every_key_with_default(capsys):
    code, out, _ = _run(capsys, "--help")
    assert code == 0
    for key, (default, _) in KEYS.items():
        line = next(ln for ln in out.splitlines() if ln.strip().startswith(key + " "))
        shown = str(default).lower() if isinstance(default, bool) else str(default)
        assert f"default {shown}" in line
    code, out, _ = _run(capsys, "train", "--help")
    assert code == 0 and "loss.lambda" in out


def test_paper_defaults():
    v = resolve_config()
    assert v["model.d"] == 64 and v["model.K"] == 256 and v["model.heads"] == 4
    assert v["graph.delta"] == 5 and v["graph.depth"] == 2
    assert v["loss.tau1"] == 1.0 and v["loss.tau2"] == 0.2 and v["loss.lambda"] == 50.0
    assert v["perturb.epsilon"] == 0.1 and v["loss.n_negatives"] == 10 and v["train.batch_size"] == 256


def test_config_problems_listed_together(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.dd = 3\nloss.lambda = lots\nnot_a_key = 1\n")
    code, _, err = _run(capsys, "prepare", "--config", str(bad))
    assert code == ExitCode.CONFIG
    assert "model.dd" in err and "loss.lambda" in err and "not_a_key" in err
    with pytest.raises(ConfigError):
        resolve_config(overrides={"ablation.graph_aug": "true", "ablation.seq_aug": "true"})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"model.d": "6", "model.heads": "4"})


def test_unknown_override_rejected(workspace, capsys):
    _, cfg = workspace
    code, _, err = _run(capsys, "prepare", "--config", str(cfg), "--model.width", "3")
    assert code == ExitCode.CONFIG and "model.width" in err


def test_prepare_stats_and_stable_manifest(workspace, capsys, tmp_path):
    _, cfg = workspace
    code, out, _ = _run(capsys, "prepare", "--config", str(cfg), "--run-dir", str(tmp_path / "a"))
    assert code == 0
    header, values = out.splitlines()[:2]
    assert header.split("\t") == ["users", "items", "actions", "sparsity"]
    assert values.split("\t")[3].endswith("%")
    _run(capsys, "prepare", "--config", str(cfg), "--run-dir", str(tmp_path / "b"))
    assert (tmp_path / "a" / "split.bin").read_bytes() == (tmp_path / "b" / "split.bin").read_bytes()
    _run(capsys, "prepare", "--config", str(cfg), "--run-dir", str(tmp_path / "c"), "--seed", "9")
    assert (tmp_path / "a" / "split.bin").read_bytes() != (tmp_path / "c" / "split.bin").read_bytes()


def test_new_run_dir_named_by_hash_and_time(workspace, capsys):
    _, cfg = workspace
    code, out, _ = _run(capsys, "prepare", "--config", str(cfg))
    assert code == 0
    name = os.path.basename(_run_dir(out))
    digest, stamp = name.split("-", 1)
    assert len(digest) == 10 and int(digest, 16) >= 0
    time.strptime(stamp[:15], "%Y%m%d-%H%M%S")
    assert os.path.exists(os.path.join(_run_dir(out), "config.cfg"))


def test_missing_input_is_data_error(tmp_path, capsys):
    code, _, err = _run(capsys, "prepare", "--data.input", str(tmp_path / "nope.tsv"), "--run.root", str(tmp_path))
    assert code == ExitCode.DATA and "data error" in err


def test_bad_thread_setting(workspace, capsys, monkeypatch):
    _, cfg = workspace
    monkeypatch.setenv("BIPCL_THREADS", "zero")
    code, _, _ = _run(capsys, "prepare", "--config", str(cfg))
    assert code == ExitCode.USAGE
    monkeypatch.setenv("BIPCL_THREADS", "1")
    code, _, _ = _run(capsys, "prepare", "--config", str(cfg))
    assert code == 0


def test_train_smoke_artifacts(trained):
    for name in ("best.ckpt", "last.ckpt", "train_log.tsv", "train_log.png", "graph.bin", "split.bin", "config.cfg"):
        assert os.path.exists(os.path.join(trained, name)), name
    rows = list(csv.reader(open(os.path.join(trained, "train_log.tsv")), delimiter="\t"))
    assert rows[0] == ["epoch", "step", "L_rec", "L_CL", "val_recall@20", "elapsed_s"]
    assert len(rows) == 3


def test_train_smoke_under_a_minute(workspace, tmp_path):
    _, cfg = workspace
    t0 = time.perf_counter()
    assert main(["train", "--config", str(cfg), "--run-dir", str(tmp_path / "t"), "-q"]) == 0
    assert time.perf_counter() - t0 < 60


def _log_without_time(run_dir):
    rows = list(csv.reader(open(os.path.join(run_dir, "train_log.tsv")), delimiter="\t"))
    return [r[:-1] for r in rows]


def test_lambda_zero_aliases_no_cl(workspace, tmp_path):
    _, cfg = workspace
    a, b = str(tmp_path / "lam0"), str(tmp_path / "nocl")
    assert main(["train", "--config", str(cfg), "--run-dir", a, "--loss.lambda", "0", "-q"]) == 0
    assert main(["train", "--config", str(cfg), "--run-dir", b, "--ablation.no_cl", "true", "-q"]) == 0
    assert _log_without_time(a) == _log_without_time(b)
    assert open(os.path.join(a, "last.ckpt"), "rb").read() == open(os.path.join(b, "last.ckpt"), "rb").read()


def test_resume_continues_to_same_state(workspace, trained, tmp_path):
    _, cfg = workspace
    part = str(tmp_path / "part")
    assert main(["train", "--config", str(cfg), "--run-dir", part, "--train.epochs_max", "1", "-q"]) == 0
    assert main(["train", "--config", str(cfg), "--run-dir", part, "--resume", "-q"]) == 0
    assert open(os.path.join(part, "last.ckpt"), "rb").read() == open(os.path.join(trained, "last.ckpt"), "rb").read()
    assert _log_without_time(part) == _log_without_time(trained)


def test_eval_groups_and_report_round_trip(workspace, trained, capsys, tmp_path):
    _, cfg = workspace
    code, out, _ = _run(capsys, "eval", "--config", str(cfg), "--run-dir", trained, "--groups", "--out", str(tmp_path))
    assert code == 0
    rep = read_report(tmp_path / "report_test.tsv")
    assert set(rep.values) == {"all", "sparse", "normal", "popular"}
    assert sum(rep.counts[g] for g in ("sparse", "normal", "popular")) == rep.counts["all"]
    assert (tmp_path / "report_test.png").exists()
    printed = {(r.split("\t")[0], r.split("\t")[1], r.split("\t")[2]) for r in out.splitlines()[1:]}
    assert ("all", "recall", "20") in printed and ("all", "hr", "50") in printed


def test_eval_dimension_mismatch(workspace, trained, capsys):
    _, cfg = workspace
    code, _, err = _run(capsys, "eval", "--config", str(cfg), "--run-dir", trained, "--model.d", "16")
    assert code == ExitCode.CHECKPOINT and "d: checkpoint 8 vs config 16" in err


def test_ablate_two_variants(workspace, capsys, tmp_path):
    _, cfg = workspace
    code, out, _ = _run(capsys, "ablate", "--config", str(cfg), "--variants", "full,no_cl", "--run-dir", str(tmp_path),
                        "--train.epochs_max", "1", "-q")
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "ablation.tsv"), delimiter="\t"))
    assert rows[0][0] == "variant" and "recall@20" in rows[0]
    assert [r[0] for r in rows[1:]] == ["full", "no_cl"]
    assert (tmp_path / "ablation.png").exists()
    assert (tmp_path / "seed0" / "no_cl" / "best.ckpt").exists()
    code, _, err = _run(capsys, "ablate", "--config", str(cfg), "--variants", "full,bogus", "--run-dir", str(tmp_path / "x"))
    assert code == ExitCode.CONFIG and "bogus" in err


def test_geometry_one_and_two_checkpoints(workspace, trained, capsys, tmp_path):
    _, cfg = workspace
    ckpt = os.path.join(trained, "best.ckpt")
    code, out, _ = _run(capsys, "geometry", "--config", str(cfg), ckpt, "--out", str(tmp_path / "one"))
    assert code == 0
    assert sorted(p for p in os.listdir(tmp_path / "one") if p.startswith("density_")) == ["density_model1.tsv"]
    code, out, _ = _run(capsys, "geometry", "--config", str(cfg), ckpt, ckpt, "--labels", "a,b", "--out", str(tmp_path / "two"))
    assert code == 0
    ga, da, ca = read_density(tmp_path / "two" / "density_a.tsv")
    gb, db, cb = read_density(tmp_path / "two" / "density_b.tsv")
    assert np.array_equal(da, db) and ca == cb
    assert (tmp_path / "two" / "density.png").exists()


def test_geometry_rejects_mismatched_dimensions(workspace, trained, capsys, tmp_path):
    _, cfg = workspace
    other = str(tmp_path / "wide")
    assert main(["train", "--config", str(cfg), "--run-dir", other, "--model.d", "12", "--train.max_steps", "1", "-q"]) == 0
    code, _, err = _run(capsys, "geometry", "--config", str(cfg), os.path.join(trained, "best.ckpt"), os.path.join(other, "best.ckpt"))
    assert code == ExitCode.CHECKPOINT and "dimension" in err
