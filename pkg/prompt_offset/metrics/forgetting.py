# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
forgetting.py

Backward forgetting over an accuracy history a[l][j], the accuracy on the
classes of task j measured after training task l (1-indexed, j <= l).
Task j is session j - 1.
"""

import logging

from prompt_offset.exceptions import ContractError

LOGGER = logging.getLogger(__name__)


class AccuracyHistory:
    """Lower-triangular table of task accuracies"""

    def __init__(self):
        self._table = {}

    def record(self, l, j, accuracy):
        if not 1 <= j <= l:
            raise ContractError(f"history entries need 1 <= j <= l, got l={l}, j={j}")
        if not 0 <= accuracy <= 100:
            raise ContractError(f"accuracy {accuracy} outside [0, 100]")
        self._table[(l, j)] = float(accuracy)

    def record_session(self, session, task_accuracy):
        """Record the per-session accuracies measured after `session` (0-based)"""
        for task_session, accuracy in task_accuracy.items():
            self.record(session + 1, int(task_session) + 1, accuracy)

    def get(self, l, j):
        try:
            return self._table[(l, j)]
        except KeyError as k_err:
            raise ContractError(f"history has no entry a[{l}][{j}]") from k_err

    def __contains__(self, key):
        return key in self._table

    @property
    def last_task(self):
        return max((l for l, _ in self._table), default=0)

    def to_dict(self):
        return {f"{l},{j}": v for (l, j), v in sorted(self._table.items())}

    @classmethod
    def from_dict(cls, table):
        history = cls()
        for key, value in table.items():
            l, j = (int(v) for v in key.split(","))
            history.record(l, j, value)
        return history


def bwf(history, k):
    """
    Average forgetting F_k after task k

        F_k = 1/(k-1) * sum_{j<k} [ max_{l in j..k-1} a[l][j] - a[k][j] ]

    Negative values mean accuracy improved.
    """
    if k < 2:
        raise ContractError(f"forgetting needs k >= 2, got {k}")
    total = 0.0
    for j in range(1, k):
        peak = max(history.get(l, j) for l in range(j, k))
        total += peak - history.get(k, j)
    return total / (k - 1)
