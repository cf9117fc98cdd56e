# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import pytest
import yaml

from prompt_offset.cli.poet import main
from prompt_offset.cli.utils import experiment_dir, read_metrics_csv
from prompt_offset.data.loaders import load_skeleton_file
from prompt_offset.training.config import load_config, save_config

GEN_ARGS = [
    "--frames", "8", "--per-class-train", "6", "--per-class-test", "3", "--shots", "2",
]


def _gen(outdir, *extra):
    return main(["gen-data", "--outdir", str(outdir), *GEN_ARGS, *extra])


def test_gen_data_is_reproducible(tmp_path):
    assert _gen(tmp_path / "a", "--seed", "4") == 0
    assert _gen(tmp_path / "b", "--seed", "4") == 0
    for name in ("train.txt", "test.txt", "protocol.yml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _gen(tmp_path / "c", "--seed", "5") == 0
    assert (tmp_path / "a" / "train.txt").read_bytes() != (tmp_path / "c" / "train.txt").read_bytes()


def test_gen_data_hand_gesture_shape(tmp_path):
    assert _gen(tmp_path, "--classes", "14", "--ways", "2", "--sessions", "3", "--joints", "22") == 0
    with open(tmp_path / "protocol.yml", "r", encoding="utf-8") as fin:
        protocol = yaml.safe_load(fin)
    assert len(protocol["base_classes"]) == 8
    assert [len(s["classes"]) for s in protocol["sessions"]] == [2, 2, 2]

    config = load_config(tmp_path / "experiment.yml")
    assert config.dataset.source == "files"
    assert config.dataset.format == "shrec-style"
    assert config.protocol.base_classes == 8
    train = load_skeleton_file(config.dataset.train_path, "shrec-style", frames=8)
    assert len(train) == 14 * 6
    assert train[0].frames.shape == (8, 22, 3)


def test_gen_data_rejects_joint_count(tmp_path):
    assert _gen(tmp_path, "--joints", "10") == 2


@pytest.fixture
def tiny_yaml(tmp_path, tiny_config):
    return save_config(tiny_config(), tmp_path / "tiny.yml")


def test_train_writes_and_skips_runs(tmp_path, tiny_yaml):
    outdir = tmp_path / "runs"
    args = ["train", str(tiny_yaml), "--outdir", str(outdir), "--no-logs"]
    assert main(args) == 0
    config = load_config(tiny_yaml).with_overrides("output", root=str(outdir))
    run_dir = experiment_dir(config) / "seed-0"
    metrics = read_metrics_csv(run_dir / "metrics.csv")
    assert [row["session"] for row in metrics] == [0, 1, 2]
    assert (experiment_dir(config) / "summary.csv").exists()
    for name in ("config.yml", "protocol.yml", "selections.csv", "session-2.ckpt"):
        assert (run_dir / name).exists()
    assert not list(run_dir.glob("*-poet.log"))

    stamp = (run_dir / "metrics.csv").stat().st_mtime_ns
    assert main(args) == 0
    assert (run_dir / "metrics.csv").stat().st_mtime_ns == stamp

    (run_dir / "metrics.csv").unlink()
    assert main(args) == 1
    assert main(args + ["--resume"]) == 0
    assert [row["session"] for row in read_metrics_csv(run_dir / "metrics.csv")] == [0, 1, 2]


def test_train_overrides(tmp_path, tiny_yaml):
    outdir = tmp_path / "runs"
    args = ["train", str(tiny_yaml), "--outdir", str(outdir), "--method", "fe", "--set", "train.lam=0.5"]
    assert main(args) == 0
    config = load_config(tiny_yaml).with_overrides("output", root=str(outdir))
    config = config.with_overrides("train", method="fe", lam=0.5)
    run_dir = experiment_dir(config) / "seed-0"
    assert load_config(run_dir / "config.yml").train.method == "fe"
    assert list(run_dir.glob("*-poet.log"))


@pytest.mark.parametrize(
    "train_section,extra",
    [
        ({"method": "replay"}, []),
        ({}, ["--set", "train.sort"]),
        ({}, ["--set", "trainer.sort=false"]),
        ({}, ["--set", "train.base_epochs=many"]),
    ],
)
def test_bad_config_exit_code(tmp_path, tiny_yaml, train_section, extra):
    with open(tiny_yaml, "r", encoding="utf-8") as fin:
        description = yaml.safe_load(fin)
    description["train"].update(train_section)
    path = tmp_path / "bad.yml"
    with open(path, "w", encoding="utf-8") as fout:
        yaml.safe_dump(description, fout)
    assert main(["train", str(path), "--outdir", str(tmp_path / "runs"), *extra]) == 2


def test_eval_and_report(tmp_path, tiny_yaml):
    outdir = tmp_path / "runs"
    assert main(["train", str(tiny_yaml), "--outdir", str(outdir), "--no-logs"]) == 0
    config = load_config(tiny_yaml).with_overrides("output", root=str(outdir))
    run_dir = experiment_dir(config) / "seed-0"

    assert main(["eval", "--checkpoint", str(run_dir / "session-2.ckpt")]) == 0
    evaluated = read_metrics_csv(run_dir / "eval" / "eval-session-2.csv")
    trained = read_metrics_csv(run_dir / "metrics.csv")[-1]
    for key in ("old", "new", "avg", "a_hm", "bwf"):
        assert evaluated[0][key] == trained[key]
    assert (run_dir / "eval" / "eval-confusion-session-2.csv").exists()

    assert main(["report", str(run_dir)]) == 0
    assert (run_dir / "report" / "collapse.csv").exists()
    assert (run_dir / "report" / "order-matrix-session-0.csv").exists()


def test_missing_checkpoint_is_io_error(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nothing.ckpt")]) == 5


def test_version_and_presets(capsys):
    assert main(["-v"]) == 0
    assert main(["--list-presets"]) == 0
    assert "synthetic" in capsys.readouterr().out


def test_undecodable_skeleton_file_exit_code(tmp_path, tiny_yaml):
    clips = tmp_path / "clips.txt"
    clips.write_bytes(b"1 25 0\n\xff\xfe 0 0\n")
    with open(tiny_yaml, "r", encoding="utf-8") as fin:
        description = yaml.safe_load(fin)
    description["dataset"] = {
        "source": "files",
        "format": "ntu-style",
        "topology": "ntu-rgbd",
        "frames": 8,
        "train_path": str(clips),
        "test_path": str(clips),
    }
    path = tmp_path / "files.yml"
    with open(path, "w", encoding="utf-8") as fout:
        yaml.safe_dump(description, fout)
    assert main(["train", str(path), "--outdir", str(tmp_path / "runs"), "--no-logs"]) == 3
