# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import csv
import logging
from datetime import datetime
from pathlib import Path

import numpy as np

from prompt_offset.cli import LOG_FMT
from prompt_offset.exceptions import PoetError
from prompt_offset.metrics.accuracy import METRIC_COLUMNS

LOGGER = logging.getLogger(__name__)

SUMMARY_METRICS = ("old", "new", "avg", "a_hm", "bwf")
COMPLETE_MARKER = "metrics.csv"


def save_logging_in_file(logger, logfile=None, processed_dir=None, level=logging.INFO):
    """ Setup logger to save to logfile as well, returns the handler """
    now = datetime.now()
    today = str(now).split()[0]
    time = f"{now.hour:0>2}{now.minute:0>2}"

    processed_dir = Path(processed_dir)
    if not logfile:
        logfile = processed_dir / f"{today}-{time}-poet.log"
    handler = logging.FileHandler(logfile)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FMT))
    logger.addHandler(handler)
    return handler


def experiment_dir(config):
    """All runs of one config live in <root>/<name>/<config hash>"""
    return config.output.root_dir / config.output.name / config.config_hash


def run_dir_for(config, seed):
    return experiment_dir(config) / f"seed-{seed}"


def run_status(run_dir):
    """'missing', 'complete' (metrics written) or 'partial'"""
    run_dir = Path(run_dir)
    if not run_dir.exists() or not any(run_dir.iterdir()):
        return "missing"
    if (run_dir / COMPLETE_MARKER).exists():
        return "complete"
    return "partial"


def prepare_run_dir(run_dir, resume=False, force=False):
    """
    Decide what to do with a run directory

    Returns
    -------
    action : {'skip', 'fresh', 'resume'}

    Raises
    ------
    PoetError
        for a partial run when neither resume nor force is given
    """
    run_dir = Path(run_dir)
    status = run_status(run_dir)
    if status == "complete" and not force:
        LOGGER.report("Run %s is complete, skipping (use --force to re-run)", run_dir)
        return "skip"
    if status == "partial" and not (resume or force):
        raise PoetError(f"run {run_dir} is incomplete, pass --resume to continue it or --force to restart")
    if force and status != "missing":
        for path in run_dir.iterdir():
            if path.is_file():
                path.unlink()
    run_dir.mkdir(parents=True, exist_ok=True)
    return "resume" if resume and status == "partial" and not force else "fresh"


def write_metrics_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.DictWriter(fout, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.row())
    return path


def read_metrics_csv(path):
    """Rows of a metrics CSV, empty cells as None and numbers as float"""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fin:
        for row in csv.DictReader(fin):
            parsed = {"session": int(row["session"])}
            for key in METRIC_COLUMNS[1:]:
                parsed[key] = float(row[key]) if row.get(key, "") != "" else None
            rows.append(parsed)
    return rows


def summarize_runs(metrics_by_seed):
    """
    Mean and standard deviation of every metric per session

    Parameters
    ----------
    metrics_by_seed : Dict[int, List[dict]]
        rows as returned by `read_metrics_csv`

    Returns
    -------
    rows : List[dict]
        one per session with keys session, seeds, <metric>_mean, <metric>_std;
        empty when the metric is undefined for that session
    """
    by_session = {}
    for rows in metrics_by_seed.values():
        for row in rows:
            by_session.setdefault(row["session"], []).append(row)

    summary = []
    for session in sorted(by_session):
        rows = by_session[session]
        entry = {"session": session, "seeds": len(rows)}
        for key in SUMMARY_METRICS:
            values = np.array([r[key] for r in rows if r[key] is not None], dtype=np.float64)
            entry[f"{key}_mean"] = round(float(values.mean()), 2) if values.size else ""
            entry[f"{key}_std"] = round(float(values.std()), 2) if values.size else ""
        summary.append(entry)
    return summary


def write_summary_csv(summary, path):
    columns = ["session", "seeds"] + [f"{k}_{s}" for k in SUMMARY_METRICS for s in ("mean", "std")]
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.DictWriter(fout, fieldnames=columns)
        writer.writeheader()
        writer.writerows(summary)
    return path
