# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

# pylint: disable=no-member
"""
runner.py

Runs one experiment config over its seeds. Each seed is an independent task
owning its run directory <root>/<name>/<config hash>/seed-<seed>; seeds are
fanned out over ray workers or run in-process when num_workers is 0. After
all seeds finish, their metrics are aggregated into summary.csv next to the
run directories.
"""

import logging
from pathlib import Path

import psutil
import ray
import yaml
from tqdm import tqdm

from prompt_offset.cli.utils import (
    experiment_dir,
    prepare_run_dir,
    read_metrics_csv,
    run_dir_for,
    save_logging_in_file,
    summarize_runs,
    write_metrics_csv,
    write_summary_csv,
)
from prompt_offset.data.loaders import load_skeleton_file
from prompt_offset.data.protocol import SplitDataset, make_protocol
from prompt_offset.data.synthetic import synth_generate
from prompt_offset.training.config import save_config
from prompt_offset.training.observers import SelectionLogObserver, TraceObserver
from prompt_offset.training.trainer import run_protocol

LOGGER = logging.getLogger(__name__)


def fmt_num(integer):
    """make numbers readable e.g. 1000 -> '1,000'"""
    if isinstance(integer, float):
        return f"{integer:.2f}"
    integer = str(integer)
    dec = len(integer)
    groups = [integer[: dec % 3]] if dec % 3 else []
    groups.extend([integer[i: i + 3] for i in range(dec % 3, dec, 3)])
    return ",".join(groups)


def report(msg_kwargs, print_stdout=False, fmt=fmt_num):
    """ report statistics of a run """
    msg = []
    for label, contents in msg_kwargs.items():
        msg.append(f"{label}:")
        if not contents:
            continue
        maxw = max(map(len, contents.keys())) + 2
        for k, v in contents.items():
            lab = f"{k}:".ljust(maxw)
            msg.append(f"    {lab}{fmt(v)}")
    LOGGER.report("\n".join(msg))
    if print_stdout:
        tqdm.write("\n".join(msg))


def build_dataset(config):
    """Train/test split described by the dataset section of `config`"""
    ds = config.dataset
    topology = ds.build_topology()
    if ds.source == "synthetic":
        return synth_generate(
            topology, ds.classes, ds.per_class_train, ds.per_class_test,
            ds.frames, ds.noise_sigma, ds.seed,
        )
    train = load_skeleton_file(ds.train_path, ds.format, frames=ds.frames)
    test = load_skeleton_file(ds.test_path, ds.format, frames=ds.frames)
    return SplitDataset(train=train, test=test, topology=topology)


def build_observers(config, run_id, run_dir):
    observers = []
    if config.output.selection_log:
        observers.append(SelectionLogObserver(run_id, processed_dir=run_dir))
    if config.output.trace:
        observers.append(TraceObserver(processed_dir=run_dir))
    return observers


def run_seed(config, seed, run_dir, resume=False, logs=True):
    """
    Train and evaluate every session of one seed

    Parameters
    ----------
    config : ExperimentConfig
    seed : int
    run_dir : str/Path
        created if missing, holds every artifact of the run
    resume : True/False
        continue after the last checkpoint in `run_dir`
    logs : True/False
        also write INFO logs into `run_dir`

    Returns
    -------
    result : dict
        seed, rows (metrics CSV rows) and observer statistics
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = config.for_seed(seed)
    package_logger = logging.getLogger("prompt_offset")
    handler = save_logging_in_file(package_logger, processed_dir=run_dir) if logs else None
    try:
        save_config(config, run_dir / "config.yml")
        dataset = build_dataset(config)
        proto = config.protocol
        protocol, subsets = make_protocol(
            dataset, proto.base_classes, proto.sessions, proto.ways, proto.shots,
            class_order=proto.class_order, seed=seed,
        )
        with open(run_dir / "protocol.yml", "w", encoding="utf-8") as fout:
            yaml.safe_dump(protocol.to_dict(), fout, sort_keys=False)

        observers = build_observers(config, f"{config.config_hash}-seed{seed}", run_dir)
        for obs in observers:
            obs.speak()
        statistics = {}
        reports = run_protocol(
            config, protocol, subsets, dataset, observers=observers,
            run_dir=run_dir, resume=resume, statistics=statistics,
        )
        write_metrics_csv(reports, run_dir / "metrics.csv")
        LOGGER.report("Seed %d finished, results in %s", seed, run_dir)
        return {"seed": seed, "rows": [r.row() for r in reports], "statistics": statistics}
    finally:
        if handler is not None:
            package_logger.removeHandler(handler)
            handler.close()


@ray.remote
def run_seed_remote(config, seed, run_dir, resume=False, logs=True):
    return run_seed(config, seed, run_dir, resume=resume, logs=logs)


def _unwrap(err):
    cause = getattr(err, "cause", None)
    return cause if isinstance(cause, Exception) else err


def _dispatch(config, tasks, num_workers, logs):
    """Run (seed, run_dir, resume) tasks on ray workers, yielding results as they finish"""
    if not ray.is_initialized():
        ray.init(num_cpus=num_workers if num_workers > 0 else psutil.cpu_count())
    config_id = ray.put(config)
    pending = [
        run_seed_remote.remote(config_id, seed, str(run_dir), resume, logs)
        for seed, run_dir, resume in tasks
    ]
    with tqdm(total=len(pending), desc="seeds", position=1) as pbar:
        while pending:
            ready, pending = ray.wait(pending)
            try:
                result = ray.get(ready[0])
            except ray.exceptions.RayTaskError as r_err:
                raise _unwrap(r_err) from r_err
            pbar.update(1)
            yield result


def run_seeds(config, seeds=None, num_workers=0, resume=False, force=False, logs=True):
    """
    Run `config` for each seed and aggregate the metrics

    Parameters
    ----------
    config : ExperimentConfig
    seeds : List[int] (optional)
        defaults to config.seeds
    num_workers : int
        0 runs seeds one after the other in this process; otherwise the
        number of ray CPUs to use (negative for all available)
    resume, force : True/False
        continue partial runs / overwrite existing runs

    Returns
    -------
    summary_path : Path
        the summary CSV with mean and std per session over seeds
    """
    config.validate()
    seeds = list(config.seeds if seeds is None else seeds)
    tasks = []
    for seed in seeds:
        run_dir = run_dir_for(config, seed)
        action = prepare_run_dir(run_dir, resume=resume, force=force)
        if action != "skip":
            tasks.append((seed, run_dir, action == "resume"))
    LOGGER.report(
        "Config %s: %d seeds, %d to run in %s",
        config.config_hash, len(seeds), len(tasks), experiment_dir(config),
    )

    statistics = {"seeds_finished": 0}
    if num_workers == 0:
        results = (run_seed(config, seed, run_dir, resume=res, logs=logs) for seed, run_dir, res in tasks)
        results = tqdm(results, total=len(tasks), desc="seeds", disable=None)
    else:
        results = _dispatch(config, tasks, num_workers, logs)
    for result in results:
        statistics["seeds_finished"] += 1
        for label, value in result["statistics"].items():
            statistics[label] = statistics.get(label, 0) + value

    metrics_by_seed = {
        seed: read_metrics_csv(run_dir_for(config, seed) / "metrics.csv") for seed in seeds
    }
    summary_path = write_summary_csv(summarize_runs(metrics_by_seed), experiment_dir(config) / "summary.csv")
    report({"Statistics": statistics}, print_stdout=False)
    LOGGER.report("Summary over %d seeds written to %s", len(seeds), summary_path)
    return summary_path
