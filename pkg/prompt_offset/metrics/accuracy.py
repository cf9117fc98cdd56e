# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
accuracy.py

Session-level evaluation quantities. Accuracies are kept as exact
percentages; rounding to one decimal happens only when a report is emitted.

    avg   accuracy over every test sample of the seen classes
    old   accuracy over samples of classes introduced before the current session
    new   accuracy over samples of classes introduced in the current session
    a_hm  harmonic mean of old and new
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from prompt_offset.exceptions import ContractError

LOGGER = logging.getLogger(__name__)

METRIC_COLUMNS = ("session", "old", "new", "avg", "a_hm", "bwf", "wall_seconds")


@dataclass
class SessionReport:
    """
    Evaluation after one session. `old`, `a_hm` and `bwf` are None when
    undefined (base session, or no earlier sessions to forget).
    """

    session: int
    avg: float
    new: float
    old: Optional[float] = None
    a_hm: Optional[float] = None
    bwf: Optional[float] = None
    per_class: Dict[int, float] = field(default_factory=dict)
    task_accuracy: Dict[int, float] = field(default_factory=dict)
    seen_classes: List[int] = field(default_factory=list)
    confusion: Optional[np.ndarray] = None
    wall_seconds: float = 0.0

    def row(self, digits=1):
        """CSV row with percentages rounded for emission, empty when undefined"""
        def fmt(value):
            return "" if value is None else round(float(value), digits)

        return {
            "session": self.session,
            "old": fmt(self.old),
            "new": fmt(self.new),
            "avg": fmt(self.avg),
            "a_hm": fmt(self.a_hm),
            "bwf": fmt(self.bwf),
            "wall_seconds": round(self.wall_seconds, 3),
        }

    def to_dict(self):
        return {
            "session": self.session,
            "avg": self.avg,
            "old": self.old,
            "new": self.new,
            "a_hm": self.a_hm,
            "bwf": self.bwf,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "task_accuracy": {str(k): v for k, v in self.task_accuracy.items()},
            "seen_classes": list(self.seen_classes),
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, description):
        return cls(
            session=int(description["session"]),
            avg=description["avg"],
            old=description["old"],
            new=description["new"],
            a_hm=description["a_hm"],
            bwf=description["bwf"],
            per_class={int(k): v for k, v in description["per_class"].items()},
            task_accuracy={int(k): v for k, v in description["task_accuracy"].items()},
            seen_classes=list(description["seen_classes"]),
            wall_seconds=description["wall_seconds"],
        )


def _percent(correct, total):
    return 100.0 * float(correct) / float(total)


def _as_labels(predictions, labels):
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if predictions.shape != labels.shape:
        raise ContractError(
            f"{predictions.size} predictions do not align with {labels.size} labels"
        )
    return predictions, labels


def compute_accuracies(predictions, labels, class_sessions, current_session=None):
    """
    Avg / Old / New accuracies and per-class accuracy

    Parameters
    ----------
    predictions : array-like of int
        predicted class ids
    labels : array-like of int
        true class ids, aligned with predictions
    class_sessions : Dict[int, int]
        session index in which each seen class was introduced
    current_session : int (optional)
        defaults to the latest session in `class_sessions`

    Returns
    -------
    avg, old, new, per_class : float, float/None, float, Dict[int, float]
        old is None when no sample belongs to an earlier session

    Raises
    ------
    ContractError
        for a label outside `class_sessions` or no sample of the current session
    """
    predictions, labels = _as_labels(predictions, labels)
    if not class_sessions:
        raise ContractError("no seen classes to evaluate")
    if current_session is None:
        current_session = max(class_sessions.values())
    unknown = sorted(set(labels.tolist()) - set(class_sessions))
    if unknown:
        raise ContractError(f"unknown class ids {unknown}")
    if labels.size == 0:
        raise ContractError("no test samples")

    correct = predictions == labels
    sessions = np.array([class_sessions[c] for c in labels.tolist()], dtype=np.int64)
    is_new = sessions == current_session
    if not is_new.any():
        raise ContractError(f"session {current_session} has no test samples, new accuracy is undefined")
    is_old = sessions < current_session

    avg = _percent(correct.sum(), labels.size)
    new = _percent(correct[is_new].sum(), is_new.sum())
    old = _percent(correct[is_old].sum(), is_old.sum()) if is_old.any() else None

    per_class = {}
    for class_id in sorted(set(labels.tolist())):
        mask = labels == class_id
        per_class[class_id] = _percent(correct[mask].sum(), mask.sum())
    return avg, old, new, per_class


def task_accuracies(predictions, labels, class_sessions):
    """Accuracy over the classes of each session, keyed by session index"""
    predictions, labels = _as_labels(predictions, labels)
    sessions = np.array([class_sessions[c] for c in labels.tolist()], dtype=np.int64)
    result = {}
    for session in sorted(set(sessions.tolist())):
        mask = sessions == session
        result[session] = _percent((predictions[mask] == labels[mask]).sum(), mask.sum())
    return result


def harmonic_mean(old, new):
    """2 * old * new / (old + new), 0 when both are 0"""
    if old < 0 or new < 0:
        raise ContractError(f"accuracies must be >= 0, got old={old}, new={new}")
    if old + new == 0:
        return 0.0
    return 2.0 * old * new / (old + new)


def confusion_matrix(predictions, labels, seen_classes):
    """
    Square count matrix over `seen_classes`; rows are true classes,
    columns predicted classes, both in the order given.
    """
    predictions, labels = _as_labels(predictions, labels)
    seen_classes = list(seen_classes)
    position = {class_id: i for i, class_id in enumerate(seen_classes)}
    matrix = np.zeros((len(seen_classes), len(seen_classes)), dtype=np.int64)
    for pred, label in zip(predictions.tolist(), labels.tolist()):
        if label not in position or pred not in position:
            raise ContractError(f"class {label if label not in position else pred} is not a seen class")
        matrix[position[label], position[pred]] += 1
    return matrix
