# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

# pylint: disable=invalid-name
"""
poet

command line tool for generating synthetic skeleton benchmarks, training
and evaluating few-shot class-incremental runs, and exporting their
diagnostics. See command line help dialogue for usage:

    poet -h
    poet gen-data --outdir data/synthetic
    poet train --preset synthetic --method fe
    poet eval --checkpoint runs/poet/<hash>/seed-0/session-2.ckpt
    poet report runs/poet/<hash>/seed-0 --plots

Exit codes: 0 success, 1 other prompt_offset errors, 2 configuration,
3 data/protocol, 4 training/contract, 5 checkpoint and I/O errors.
"""

import argparse
import logging
import sys
from pathlib import Path

import yaml
from columnize import columnize

import prompt_offset
from prompt_offset.cli import console_logging
from prompt_offset.cli.report import cmd_report
from prompt_offset.cli.runner import build_dataset, run_seeds
from prompt_offset.cli.utils import write_metrics_csv
from prompt_offset.data.loaders import FORMAT_JOINTS, write_skeleton_file
from prompt_offset.data.protocol import make_protocol
from prompt_offset.data.skeleton import TOPOLOGIES, get_topology
from prompt_offset.data.synthetic import synth_generate
from prompt_offset.exceptions import IO_EXIT_CODE, ConfigurationError, PoetError
from prompt_offset.metrics.diagnostics import write_grid_csv
from prompt_offset.metrics.forgetting import AccuracyHistory, bwf
from prompt_offset.training.config import METHODS, PRESET_DIR, from_dict, load_config, load_preset
from prompt_offset.training.checkpoint import load_checkpoint
from prompt_offset.training.trainer import evaluate

LOGGER = logging.getLogger("prompt_offset.cli.poet")

JOINTS_FORMAT = {joints: tag for tag, joints in FORMAT_JOINTS.items()}


def cmd_gen_data(args):
    """
    Write a synthetic benchmark as skeleton text files, with its protocol
    and an experiment config that trains on the files
    """
    if args.joints not in JOINTS_FORMAT:
        raise ConfigurationError("--joints", f"files hold {sorted(JOINTS_FORMAT)} joints per frame")
    base = args.base_classes if args.base_classes is not None else args.classes - args.sessions * args.ways
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    topology = get_topology(args.topology, joint_count=args.joints)
    dataset = synth_generate(
        topology, args.classes, args.per_class_train, args.per_class_test,
        args.frames, args.noise, args.seed,
    )
    protocol, _ = make_protocol(dataset, base, args.sessions, args.ways, args.shots, seed=args.seed)

    train_path = write_skeleton_file(dataset.train, outdir / "train.txt")
    test_path = write_skeleton_file(dataset.test, outdir / "test.txt")
    with open(outdir / "protocol.yml", "w", encoding="utf-8") as fout:
        yaml.safe_dump(protocol.to_dict(), fout, sort_keys=False)

    experiment = {
        "dataset": {
            "source": "files",
            "format": JOINTS_FORMAT[args.joints],
            "topology": args.topology,
            "frames": args.frames,
            "train_path": str(train_path.resolve()),
            "test_path": str(test_path.resolve()),
        },
        "protocol": {"base_classes": base, "sessions": args.sessions, "ways": args.ways, "shots": args.shots},
        "seeds": [args.seed],
    }
    with open(outdir / "experiment.yml", "w", encoding="utf-8") as fout:
        yaml.safe_dump(experiment, fout, sort_keys=False)
    LOGGER.report(
        "Wrote %d classes (%d base + %dx%d-way %d-shot) to %s",
        args.classes, base, args.sessions, args.ways, args.shots, outdir,
    )
    return outdir


def _parse_override(text):
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigurationError("--set", f"expected section.key=value, got {text!r}")
    target, value = text.split("=", 1)
    section, key = target.split(".", 1)
    return section, key, yaml.safe_load(value)


def build_train_config(args):
    """Config of `poet train`: file or preset, then --method, --set and --outdir"""
    config = load_config(args.config) if args.config else load_preset(args.preset)
    description = config.resolved()
    overrides = [("train", "method", args.method)] if args.method else []
    overrides.extend(_parse_override(text) for text in args.set or ())
    if args.outdir:
        overrides.append(("output", "root", args.outdir))
    for section, key, value in overrides:
        if section not in description or not isinstance(description[section], dict):
            raise ConfigurationError(section, "unknown section")
        description[section][key] = value
    if args.seeds:
        description["seeds"] = args.seeds
    return from_dict(description)


def cmd_train(args):
    config = build_train_config(args)
    LOGGER.report("Training config %s, method %s, seeds %s", config.config_hash, config.train.method, config.seeds)
    return run_seeds(
        config, num_workers=args.num_workers, resume=args.resume, force=args.force, logs=args.no_logs,
    )


def cmd_eval(args):
    """Evaluate a checkpoint on the test split of its own or another config"""
    state = load_checkpoint(args.checkpoint)
    config = load_config(args.config) if args.config else state.config
    dataset = build_dataset(config)
    t = state.session
    report = evaluate(state, dataset.test, t)
    if t >= 1:
        history = AccuracyHistory.from_dict(state.history.to_dict())
        history.record_session(t, report.task_accuracy)
        report.bwf = bwf(history, t + 1)

    outdir = Path(args.outdir) if args.outdir else Path(args.checkpoint).parent / "eval"
    outdir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([report], outdir / f"eval-session-{t}.csv")
    write_grid_csv(report.confusion, outdir / f"eval-confusion-session-{t}.csv", "true", "pred")
    LOGGER.report(
        "Checkpoint %s, session %d: %s",
        args.checkpoint, t, ", ".join(f"{k} {v}" for k, v in report.row().items() if k != "session"),
    )
    return report


def cmd_report_args(args):
    return cmd_report(args.run_dir, plots=args.plots)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv

    if "--list-presets" in argv:
        print(columnize(sorted(p.stem for p in PRESET_DIR.glob("*.yml")), displaywidth=88, colsep=",\t"))
        return 0

    if "-v" in argv:
        print(f"{prompt_offset.__version__}")
        return 0

    PARSER = argparse.ArgumentParser(
        description="""
    Few-shot class-incremental skeleton action recognition with prompt
    offsets: generate data, train runs over seeds, evaluate checkpoints and
    export selection diagnostics.
    """
    )
    PARSER.add_argument("-v", action="store_true", help="Print version number")
    PARSER.add_argument("--list-presets", action="store_true", help="Print the preset names and quit")
    PARSER.add_argument("--verbose", action="store_true", help="show INFO logs on the console")
    SUBPARSERS = PARSER.add_subparsers(dest="command", required=True)

    GEN = SUBPARSERS.add_parser("gen-data", help="write a synthetic benchmark as skeleton files")
    GEN.add_argument("--outdir", type=str, required=True, help="directory for train.txt, test.txt and YAML files")
    GEN.add_argument("--classes", type=int, default=10, help="number of classes")
    GEN.add_argument("--joints", type=int, default=25, help="joints per frame, 25 (ntu-style) or 22 (shrec-style)")
    GEN.add_argument("--topology", type=str, default="chain", choices=sorted(TOPOLOGIES), help="joint graph")
    GEN.add_argument("--frames", type=int, default=16, help="frames per sequence, T")
    GEN.add_argument("--per-class-train", type=int, default=30, help="training sequences per class")
    GEN.add_argument("--per-class-test", type=int, default=20, help="test sequences per class")
    GEN.add_argument("--noise", type=float, default=0.05, help="standard deviation of the joint noise")
    GEN.add_argument("--seed", type=int, default=0, help="generator and shot-sampling seed")
    GEN.add_argument("--sessions", type=int, default=2, help="number of user sessions")
    GEN.add_argument("--ways", type=int, default=2, help="new classes per user session")
    GEN.add_argument("--shots", type=int, default=5, help="training samples per new class")
    GEN.add_argument(
        "--base-classes", type=int, default=None,
        help="classes of the base session, defaults to classes - sessions * ways",
    )
    GEN.set_defaults(func=cmd_gen_data)

    TRAIN = SUBPARSERS.add_parser("train", help="train and evaluate every session for each seed")
    SOURCE = TRAIN.add_mutually_exclusive_group(required=True)
    SOURCE.add_argument("config", type=str, nargs="?", help="path to a YAML experiment config")
    SOURCE.add_argument("--preset", type=str, help="name of a bundled preset, see --list-presets")
    TRAIN.add_argument("--method", type=str, choices=METHODS, help="override train.method")
    TRAIN.add_argument(
        "--set", type=str, action="append",
        help="override any key, e.g. --set train.sort=false (repeatable)",
    )
    TRAIN.add_argument("--seeds", type=int, nargs="+", help="override the seed list")
    TRAIN.add_argument(
        "--outdir", type=str,
        help="output root, defaults to output.root, then $POET_OUTPUT_ROOT, then ./runs",
    )
    TRAIN.add_argument(
        "--num_workers", type=int, default=0,
        help="ray CPUs for running seeds in parallel, 0 runs them here one by one, -1 uses all CPUs",
    )
    TRAIN.add_argument("--resume", action="store_true", help="continue partial runs from their last checkpoint")
    TRAIN.add_argument("--force", action="store_true", help="re-run completed runs, overwriting them")
    TRAIN.add_argument(
        "--no-logs", action="store_false",
        help="turn off storing verbose logs in each run directory",
    )
    TRAIN.set_defaults(func=cmd_train)

    EVAL = SUBPARSERS.add_parser("eval", help="evaluate a checkpoint")
    EVAL.add_argument("--checkpoint", type=str, required=True, help="session-<t>.ckpt file")
    EVAL.add_argument("--config", type=str, help="experiment config supplying the test data")
    EVAL.add_argument("--outdir", type=str, help="defaults to <checkpoint dir>/eval")
    EVAL.set_defaults(func=cmd_eval)

    REPORT = SUBPARSERS.add_parser("report", help="export order matrices and the collapse report of a run")
    REPORT.add_argument("run_dir", type=str, help="a run directory written by 'poet train'")
    REPORT.add_argument("--plots", action="store_true", help="also render png images (needs matplotlib)")
    REPORT.set_defaults(func=cmd_report_args)

    ARGS = PARSER.parse_args(argv)

    console_logging(logging.INFO if ARGS.verbose else logging.WARNING)
    try:
        ARGS.func(ARGS)
    except PoetError as p_err:
        LOGGER.error("%s: %s", type(p_err).__name__, p_err)
        return p_err.exit_code
    except OSError as o_err:
        LOGGER.error("I/O error: %s", o_err)
        return IO_EXIT_CODE
    return 0


if __name__ == "__main__":
    sys.exit(main())
