# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
diagnostics.py

Prompt-usage analytics over a log of ordered selections: how often each
pool index lands at each sequence position, which indices are never used
(codebook collapse) and how spread out each index is over positions.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
import torch

from prompt_offset.exceptions import ContractError

LOGGER = logging.getLogger(__name__)


@dataclass
class CollapseReport:
    """
    order_matrix : M x T counts, O[index][position]
    usage_counts : M total selections per index
    unused : sorted indices never selected
    index_entropy : M entropy (bits) of each index over positions, 0 if unused
    position_entropy : T entropy (bits) of each position over indices
    """

    order_matrix: np.ndarray
    usage_counts: np.ndarray
    unused: List[int]
    index_entropy: np.ndarray
    position_entropy: np.ndarray

    @property
    def mean_entropy(self):
        """Mean index entropy over the used indices"""
        used = self.usage_counts > 0
        return float(self.index_entropy[used].mean()) if used.any() else 0.0


def _entropy(counts, axis):
    totals = counts.sum(axis=axis, keepdims=True)
    probs = np.divide(counts, totals, out=np.zeros_like(counts, dtype=np.float64), where=totals > 0)
    logs = np.log2(probs, out=np.zeros_like(probs), where=probs > 0)
    return -(probs * logs).sum(axis=axis)


def _as_orders(selection_log):
    rows = []
    for entry in selection_log:
        order = getattr(entry, "order", entry)
        if torch.is_tensor(order):
            order = order.detach().cpu().numpy()
        order = np.asarray(order, dtype=np.int64)
        rows.append(order.reshape(-1, order.shape[-1]) if order.ndim else order.reshape(1, 1))
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    widths = {r.shape[1] for r in rows}
    if len(widths) != 1:
        raise ContractError(f"selections of different lengths {sorted(widths)} in one log")
    return np.concatenate(rows, axis=0)


def order_matrix(selection_log, pool_size=None):
    """M x T counts of each pool index at each sequence position"""
    orders = _as_orders(selection_log)
    if orders.size == 0:
        raise ContractError("selection log is empty")
    if orders.min() < 0:
        raise ContractError("negative prompt index in selection log")
    pool_size = pool_size or int(orders.max()) + 1
    if orders.max() >= pool_size:
        raise ContractError(f"prompt index {int(orders.max())} outside a pool of {pool_size}")
    T = orders.shape[1]
    matrix = np.zeros((pool_size, T), dtype=np.int64)
    np.add.at(matrix, (orders, np.broadcast_to(np.arange(T), orders.shape)), 1)
    return matrix


def collapse_diagnostics(selection_log, pool_size=None):
    """
    Usage report of a selection log

    Parameters
    ----------
    selection_log : Iterable[OrderedSelection/array-like]
        selections or raw index sequences (one per row)
    pool_size : int (optional)
        M, inferred from the largest index when missing; pass it to count
        trailing indices that were never selected as unused

    Returns
    -------
    report : CollapseReport
    """
    matrix = order_matrix(selection_log, pool_size)
    usage = matrix.sum(axis=1)
    return CollapseReport(
        order_matrix=matrix,
        usage_counts=usage,
        unused=np.flatnonzero(usage == 0).tolist(),
        index_entropy=_entropy(matrix, axis=1),
        position_entropy=_entropy(matrix, axis=0),
    )


def write_grid_csv(matrix, path, row_label="row", column_label="col"):
    """Write a 2-D array as a CSV grid with labelled header row and first column"""
    matrix = np.asarray(matrix)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow([f"{row_label}\\{column_label}"] + list(range(matrix.shape[1])))
        for i, row in enumerate(matrix.tolist()):
            writer.writerow([i] + row)
    return path


def read_grid_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fin:
        rows = list(csv.reader(fin))
    return np.asarray([[float(v) for v in row[1:]] for row in rows[1:]])
