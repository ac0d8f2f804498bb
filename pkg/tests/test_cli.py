import json

import numpy as np
import pytest

from pgap.cli import main

SPEC = "rows = 2\nrow_length = 10.0\ntrees_per_row = 5\npoints_per_tree = 40\nseed = 3\n"
CONFIG = (
    "mining.revisit_exclusion_window = 20\n"
    "mining.num_negatives = 4\n"
    "model.num_segments = 4\n"
    "model.descriptor_dim = 32\n"
    "model.local_dim = 8\n"
    "model.pointnet_widths = [16]\n"
    "model.slc_hidden = [16, 8]\n"
    "optim.learning_rate = 0.001\n"
    "train.num_points = 32\n"
)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.txt").write_text(SPEC)
    (d / "run.cfg").write_text(CONFIG)
    assert main(["generate", "--spec", str(d / "spec.txt"), "--out", str(d / "seq")]) == 0
    return d


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(workspace):
    d = workspace
    argv = ["train", "--data", str(d / "seq"), "--val", str(d / "seq"), "--config", str(d / "run.cfg"), "--epochs", "2"]
    assert main(argv + ["--out", str(d / "a" / "m.ckpt")]) == 0
    assert main(argv + ["--out", str(d / "b" / "m.ckpt")]) == 0
    return d


def test_generate_then_validate(workspace, capsys):
    assert main(["validate", "--data", str(workspace / "seq")]) == 0
    assert "frames" in capsys.readouterr().out


def test_generate_is_deterministic(workspace, tmp_path):
    assert main(["generate", "--spec", str(workspace / "spec.txt"), "--out", str(tmp_path / "again")]) == 0
    assert _files(tmp_path / "again") == _files(workspace / "seq")


def test_generate_rejects_zero_rows(tmp_path):
    (tmp_path / "bad.txt").write_text("rows = 0\n")
    assert main(["generate", "--spec", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "o")]) == 2


def test_validate_missing_directory(tmp_path):
    assert main(["validate", "--data", str(tmp_path / "nothing")]) == 2


def test_usage_error():
    assert main(["train"]) == 1
    assert main(["no-such-command"]) == 1


def test_mine_writes_csv(workspace, tmp_path):
    assert main(["mine", "--data", str(workspace / "seq"), "--config", str(workspace / "run.cfg"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "tuples.csv").read_text().startswith("anchor,positive,neg1")
    assert (tmp_path / "ground_truth.csv").exists()


def test_train_outputs(trained):
    d = trained / "a"
    assert (d / "m.ckpt").exists()
    manifest = json.loads((d / "m.ckpt.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["threads"] == 0
    hist = (d / "m_history.csv").read_text().splitlines()
    assert hist[0] == "epoch,L,L_T,L_S,val_recall@1"
    assert len(hist) == 3


def test_train_is_bit_reproducible(trained):
    for name in ("m.ckpt", "m_history.csv"):
        assert (trained / "a" / name).read_bytes() == (trained / "b" / name).read_bytes()


def test_train_without_segment_loss(workspace, tmp_path):
    argv = ["train", "--data", str(workspace / "seq"), "--val", str(workspace / "seq"), "--config", str(workspace / "run.cfg"), "--epochs", "1", "--no-slc", "--out", str(tmp_path / "m.ckpt")]
    assert main(argv) == 0
    rows = (tmp_path / "m_history.csv").read_text().splitlines()
    assert float(rows[1].split(",")[3]) == 0.0


def test_evaluate_both_protocols(trained, tmp_path):
    base = ["evaluate", "--data", str(trained / "seq"), "--ckpt", str(trained / "a" / "m.ckpt"), "--config", str(trained / "run.cfg")]
    assert main(base + ["--segment-aware", "--out", str(tmp_path / "on")]) == 0
    assert main(base + ["--out", str(tmp_path / "off")]) == 0
    on = json.loads((tmp_path / "on.json").read_text())
    off = json.loads((tmp_path / "off.json").read_text())
    assert len(on["recall_at_k"]) == 25
    assert (tmp_path / "on_segments.csv").exists()
    # cross-segment neighbours only add true matches, so hit counts can only grow
    for k in ("1", "5", "25"):
        hits_on = round(on["recall_at_k"][k] * on["num_queries"])
        hits_off = round(off["recall_at_k"][k] * off["num_queries"])
        assert hits_off >= hits_on
    assert off["num_queries"] >= on["num_queries"]


def test_evaluate_is_reproducible(trained, tmp_path):
    base = ["evaluate", "--data", str(trained / "seq"), "--ckpt", str(trained / "a" / "m.ckpt"), "--config", str(trained / "run.cfg"), "--segment-aware"]
    assert main(base + ["--out", str(tmp_path / "x")]) == 0
    assert main(base + ["--out", str(tmp_path / "y")]) == 0
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()


def test_evaluate_missing_checkpoint(workspace, tmp_path):
    code = main(["evaluate", "--data", str(workspace / "seq"), "--ckpt", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "r")])
    assert code != 0


def test_benchmark_json(trained, capsys):
    assert main(["benchmark", "--ckpt", str(trained / "a" / "m.ckpt"), "--data", str(trained / "seq"), "--reps", "2", "--batch", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["batch_size"] == 3 and report["param_count"] > 0 and report["mean_ms"] > 0


def test_export_descriptors(trained, tmp_path):
    from pgap.retrieval import load_descriptors

    assert main(["export", "--data", str(trained / "seq"), "--ckpt", str(trained / "a" / "m.ckpt"), "--out", str(tmp_path / "d.bin")]) == 0
    desc, header = load_descriptors(tmp_path / "d.bin")
    assert header["dim"] == 32
    np.testing.assert_allclose(np.linalg.norm(desc, axis=1), 1.0, atol=1e-6)


def test_bad_thread_setting(workspace, monkeypatch):
    monkeypatch.setenv("PGAP_THREADS", "many")
    assert main(["validate", "--data", str(workspace / "seq")]) == 1
