import csv
import logging

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app.api.deps import MANIFEST_NAME
from app.core.errors import EXIT_ACCEPTANCE, EXIT_DATA, EXIT_OK, EXIT_USAGE
from app.core.train import CHECKPOINT_NAME, METRICS_NAME
from app.main import run
from app.models.config import config_text
from app.models.response import RunManifest
from app.util.kittio import read_poses, write_poses


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert run(["synth", "--count", "4", "--points", "64", "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def tiny_config(tmp_path, tiny_run):
    path = tmp_path / "tiny.txt"
    path.write_text(config_text(tiny_run))
    return path


@pytest.fixture
def trained(tmp_path, synth_dir, tiny_config):
    out = tmp_path / "train"
    argv = ["train", "--data", str(synth_dir), "--config", str(tiny_config), "--out", str(out), "--no-progress"]
    assert run(argv) == EXIT_OK
    return out


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run(["synth", "--count", "10", "--points", "16", "--out", str(tmp_path / name)]) == EXIT_OK
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.txt"))
    assert len(files) == 21
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_with_no_pairs(tmp_path, capsys):
    assert run(["synth", "--count", "0", "--out", str(tmp_path / "empty")]) == EXIT_OK
    assert (tmp_path / "empty" / "index.txt").read_text().splitlines()[1] == "count 0"
    assert str(tmp_path / "empty") in capsys.readouterr().out


def test_run_manifest_is_written(synth_dir):
    manifest = RunManifest.model_validate_json((synth_dir / MANIFEST_NAME).read_text())
    assert manifest.command == "synth"
    assert manifest.seed == 1 and manifest.exit_code == EXIT_OK
    assert manifest.finished_at >= manifest.started_at


def test_default_output_root(tmp_path):
    assert run(["synth", "--count", "1", "--points", "16"]) == EXIT_OK
    assert (tmp_path / "runs" / "synth" / "index.txt").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["synth", "--bogus"],
    ["synth", "--count", "-1"],
    ["train"],
    ["--log-level", "LOUD", "synth", "--count", "0"],
    ["train", "--data", ".", "--ablation", "no-brakes"],
])
def test_usage_errors(argv):
    assert run(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == EXIT_OK
    assert "gradcheck" in capsys.readouterr().out


def test_invalid_config_key_is_named(tmp_path, synth_dir, caplog):
    bad = tmp_path / "bad.txt"
    bad.write_text("net.n_points = 64\nnet.wings = 2\n")
    assert run(["train", "--data", str(synth_dir), "--config", str(bad), "--out", str(tmp_path / "t")]) == EXIT_USAGE
    assert "net.wings" in caplog.text


def test_invalid_config_value_is_named(tmp_path, synth_dir, caplog):
    bad = tmp_path / "bad.txt"
    bad.write_text("train.batch_size = 0\n")
    assert run(["train", "--data", str(synth_dir), "--config", str(bad), "--out", str(tmp_path / "t")]) == EXIT_USAGE
    assert "train.batch_size" in caplog.text


def test_train_logs_the_ablation(tmp_path, synth_dir, tiny_config, caplog):
    caplog.set_level(logging.INFO, logger="app")
    out = tmp_path / "train"
    argv = ["train", "--data", str(synth_dir), "--config", str(tiny_config), "--ablation", "no-mask",
            "--out", str(out), "--no-progress"]
    assert run(argv) == EXIT_OK
    assert "ablation no-mask" in caplog.text
    assert "net.mask_enabled = false" in (out / "config.txt").read_text()
    assert (out / CHECKPOINT_NAME).exists()
    manifest = RunManifest.model_validate_json((out / MANIFEST_NAME).read_text())
    assert manifest.config_hash and manifest.exit_code == EXIT_OK


def test_train_on_missing_data(tmp_path, tiny_config):
    argv = ["train", "--data", str(tmp_path / "nowhere"), "--config", str(tiny_config), "--out", str(tmp_path / "t")]
    assert run(argv) == EXIT_DATA
    manifest = RunManifest.model_validate_json((tmp_path / "t" / MANIFEST_NAME).read_text())
    assert manifest.exit_code == EXIT_DATA


def test_resume_continues_the_step_counter(tmp_path, synth_dir, tiny_config, trained):
    out = tmp_path / "more"
    argv = ["train", "--data", str(synth_dir), "--config", str(tiny_config), "--steps", "5",
            "--resume", str(trained / CHECKPOINT_NAME), "--out", str(out), "--no-progress"]
    assert run(argv) == EXIT_OK
    with open(out / METRICS_NAME, newline="") as f:
        steps = [row[0] for row in csv.reader(f)][1:]
    assert steps == ["4", "5"]


def test_infer_writes_one_pose_per_frame(tmp_path, synth_dir, trained):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["infer", "--root", str(synth_dir), "--checkpoint", str(trained / CHECKPOINT_NAME),
                "--export-mask", "--out", str(out), "--no-progress"]
        assert run(argv) == EXIT_OK
        outs.append(out)
    poses = read_poses(outs[0] / "synth.txt")
    assert len(poses) == 5
    assert_array_equal(poses[0], np.eye(4))
    assert (outs[0] / "synth.txt").read_bytes() == (outs[1] / "synth.txt").read_bytes()
    assert len(list((outs[0] / "masks").glob("mask_synth_*.csv"))) == 4


def test_infer_rejects_a_mismatched_checkpoint(tmp_path, synth_dir, trained):
    argv = ["infer", "--root", str(synth_dir), "--checkpoint", str(trained / CHECKPOINT_NAME),
            "--config", str(tmp_path / "other.txt"), "--out", str(tmp_path / "i")]
    (tmp_path / "other.txt").write_text("net.n_points = 64\nnet.level_points = 32,16,8,4\nnet.pyramid_k = 4\n"
                                        "net.cost_k1 = 3\nnet.cost_k2 = 3\nnet.upconv_k = 2\n")
    assert run(argv) == EXIT_USAGE


def test_eval_scores_ground_truth_against_itself(tmp_path, capsys):
    poses = []
    for i in range(301):
        m = np.eye(4)
        m[2, 3] = float(i)
        poses.append(m)
    write_poses(tmp_path / "gt" / "00.txt", poses)
    write_poses(tmp_path / "gt" / "01.txt", poses[:20])
    write_poses(tmp_path / "est" / "00.txt", poses)
    write_poses(tmp_path / "est" / "01.txt", poses[:20])
    argv = ["eval", "--est", str(tmp_path / "est"), "--gt", str(tmp_path / "gt"), "--lengths", "100,200",
            "--out", str(tmp_path / "e")]
    assert run(argv) == EXIT_OK
    printed = capsys.readouterr().out
    assert "n/a" in printed and "mean" in printed
    assert (tmp_path / "e" / "summary.json").exists()
    assert (tmp_path / "e" / "trajectory_00_gt.csv").exists()


def test_eval_with_missing_file(tmp_path):
    write_poses(tmp_path / "gt.txt", [])
    assert run(["eval", "--est", str(tmp_path / "missing.txt"), "--gt", str(tmp_path / "gt.txt"),
                "--out", str(tmp_path / "e")]) == EXIT_DATA


def test_gradcheck_single_op(tmp_path, capsys):
    assert run(["gradcheck", "--op", "softmax", "--seed", "0", "--out", str(tmp_path / "g")]) == EXIT_OK
    assert "softmax" in capsys.readouterr().out
    assert (tmp_path / "g" / "gradcheck.json").exists()


def test_gradcheck_failure_names_the_op(tmp_path, broken_check, caplog):
    assert run(["gradcheck", "--op", broken_check, "--out", str(tmp_path / "g")]) == EXIT_ACCEPTANCE
    assert "gradient check failed for broken" in caplog.text
    manifest = RunManifest.model_validate_json((tmp_path / "g" / MANIFEST_NAME).read_text())
    assert manifest.exit_code == EXIT_ACCEPTANCE
