# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
report.py

Diagnostic exports of a finished (or partial) run directory, written to
<run_dir>/report:

    metrics.csv                  per-session metric table
    order-matrix-session-<t>.csv index x position selection counts
    collapse.csv                 per-session pool usage and entropies
    report.txt                   the human-readable summary
    *.png                        heat-maps and metric curves (--plots)

The CSV files are the contract; images are rendered only when matplotlib
is installed.
"""

import csv
import logging
import shutil
from pathlib import Path

from columnize import columnize

from prompt_offset.cli.utils import read_metrics_csv
from prompt_offset.exceptions import PoetError
from prompt_offset.metrics.diagnostics import collapse_diagnostics, write_grid_csv
from prompt_offset.training.checkpoint import read_manifest
from prompt_offset.training.observers import read_selection_log
from prompt_offset.training.trainer import latest_checkpoint

LOGGER = logging.getLogger(__name__)

EXPECTED_FILES = ("metrics.csv", "selections.csv")
NO_SELECTION_DATA = "no selection data"
COLLAPSE_COLUMNS = ("session", "pool_size", "selections", "unused_count", "mean_entropy", "unused")


def pool_sizes(run_dir, sessions):
    """
    Pool size after each session, from the newest checkpoint's block sizes,
    None for sessions without checkpoint information
    """
    path = latest_checkpoint(run_dir)
    if path is None:
        return {t: None for t in sessions}
    codebook = read_manifest(path)["codebook"]
    if codebook is None:
        return {t: None for t in sessions}
    blocks = codebook["blocks"]
    if len(blocks) == 1:
        return {t: blocks[0] for t in sessions}
    return {t: sum(blocks[:t + 1]) if t < len(blocks) else None for t in sessions}


def is_non_decreasing(values, tol=1e-9):
    return all(b >= a - tol for a, b in zip(values, values[1:]))


def _render_plots(outdir, matrices, metrics):
    try:
        import matplotlib  # pylint: disable=import-outside-toplevel
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt  # pylint: disable=import-outside-toplevel
    except ImportError:
        LOGGER.warning("matplotlib is not installed, skipping images")
        return []

    written = []
    for session, matrix in matrices.items():
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(matrix, cmap="viridis", aspect="auto")
        ax.set_xlabel("position")
        ax.set_ylabel("prompt index")
        ax.set_title(f"session {session}")
        path = outdir / f"order-matrix-session-{session}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    sessions = [row["session"] for row in metrics]
    for key in ("avg", "old", "new", "a_hm"):
        points = [(s, row[key]) for s, row in zip(sessions, metrics) if row[key] is not None]
        if points:
            ax.plot(*zip(*points), marker="o", label=key)
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    path = outdir / "metrics.png"
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def cmd_report(run_dir, plots=False):
    """
    Export diagnostics of a run directory

    Parameters
    ----------
    run_dir : str/Path
        a directory written by `poet train`
    plots : True/False
        also render png images

    Returns
    -------
    result : dict
        outdir, notes, per-session mean_entropy and unused indices

    Raises
    ------
    PoetError
        when the run directory lacks the logs the report is built from
    """
    run_dir = Path(run_dir)
    missing = [name for name in EXPECTED_FILES if not (run_dir / name).exists()]
    if missing:
        raise PoetError(
            f"{run_dir} is missing {', '.join(missing)}; a run directory must contain "
            f"{', '.join(EXPECTED_FILES)} (and session-<t>.ckpt for pool sizes)"
        )
    outdir = run_dir / "report"
    outdir.mkdir(exist_ok=True)

    metrics = read_metrics_csv(run_dir / "metrics.csv")
    shutil.copyfile(run_dir / "metrics.csv", outdir / "metrics.csv")
    lines = [f"Run {run_dir}", "", "session  old    new    avg    a_hm   bwf"]
    for row in metrics:
        cells = ["" if row[k] is None else f"{row[k]:.1f}" for k in ("old", "new", "avg", "a_hm", "bwf")]
        lines.append(f"{row['session']:<8} " + " ".join(c.ljust(6) for c in cells))
    lines.append("")

    result = {"outdir": outdir, "notes": [], "mean_entropy": {}, "unused": {}}
    selections = read_selection_log(run_dir / "selections.csv")
    matrices = {}
    if not selections:
        result["notes"].append(NO_SELECTION_DATA)
        lines.append(NO_SELECTION_DATA)
    else:
        sizes = pool_sizes(run_dir, sorted(selections))
        with open(outdir / "collapse.csv", "w", encoding="utf-8", newline="") as fout:
            writer = csv.DictWriter(fout, fieldnames=COLLAPSE_COLUMNS)
            writer.writeheader()
            for session in sorted(selections):
                collapse = collapse_diagnostics(selections[session], sizes[session])
                matrices[session] = collapse.order_matrix
                write_grid_csv(
                    collapse.order_matrix, outdir / f"order-matrix-session-{session}.csv", "index", "position"
                )
                result["mean_entropy"][session] = collapse.mean_entropy
                result["unused"][session] = collapse.unused
                writer.writerow({
                    "session": session,
                    "pool_size": collapse.order_matrix.shape[0],
                    "selections": len(selections[session]),
                    "unused_count": len(collapse.unused),
                    "mean_entropy": round(collapse.mean_entropy, 4),
                    "unused": " ".join(str(i) for i in collapse.unused),
                })
                lines.append(
                    f"session {session}: pool {collapse.order_matrix.shape[0]}, "
                    f"mean entropy {collapse.mean_entropy:.3f} bits, {len(collapse.unused)} unused"
                )
                if collapse.unused:
                    lines.append(columnize([str(i) for i in collapse.unused], displaywidth=88, colsep=", "))

        entropies = [result["mean_entropy"][s] for s in sorted(result["mean_entropy"])]
        if not is_non_decreasing(entropies):
            note = "mean prompt entropy decreases across sessions: " + ", ".join(f"{e:.3f}" for e in entropies)
            LOGGER.warning(note)
            result["notes"].append(note)
            lines.append(note)

    confusions = sorted(p.name for p in run_dir.glob("confusion-session-*.csv"))
    lines.append("")
    lines.append(f"confusion matrices: {', '.join(confusions) if confusions else 'none'}")
    if plots:
        images = _render_plots(outdir, matrices, metrics)
        lines.append(f"images: {', '.join(p.name for p in images) if images else 'none'}")

    with open(outdir / "report.txt", "w", encoding="utf-8") as fout:
        fout.write("\n".join(lines) + "\n")
    LOGGER.report("Report of %s written to %s", run_dir, outdir)
    return result
