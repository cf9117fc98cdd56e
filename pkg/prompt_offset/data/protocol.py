# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
protocol.py

The few-shot class-incremental session protocol: a base session with all
training data of its classes, followed by user sessions of N new classes
with F shots each. Class sets never overlap between sessions.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

from prompt_offset.data.skeleton import SkeletonSequence, SkeletonTopology
from prompt_offset.exceptions import ConfigurationError, ProtocolError
from prompt_offset.utils import numpy_rng

LOGGER = logging.getLogger(__name__)


@dataclass
class SplitDataset:
    """All train and test sequences of a benchmark"""

    train: List[SkeletonSequence]
    test: List[SkeletonSequence]
    topology: Optional[SkeletonTopology] = None

    @staticmethod
    def _by_class(sequences) -> Dict[int, List[SkeletonSequence]]:
        grouped = defaultdict(list)
        for seq in sequences:
            grouped[seq.class_id].append(seq)
        return dict(grouped)

    @property
    def train_by_class(self):
        return self._by_class(self.train)

    @property
    def test_by_class(self):
        return self._by_class(self.test)

    @property
    def classes(self) -> List[int]:
        return sorted({seq.class_id for seq in self.train})

    def test_for(self, classes: Sequence[int]) -> List[SkeletonSequence]:
        """Test sequences belonging to `classes`, in dataset order"""
        wanted = set(classes)
        return [seq for seq in self.test if seq.class_id in wanted]


@dataclass
class SessionSpec:
    classes: List[int]
    shots: int

    @property
    def ways(self):
        return len(self.classes)


@dataclass
class ContinualProtocol:
    """
    Base classes followed by ordered incremental sessions. Session index 0
    is the base session, user sessions are 1..len(sessions).
    """

    base_classes: List[int]
    sessions: List[SessionSpec] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = set()
        for t in range(self.num_sessions):
            classes = self.session_classes(t)
            if len(set(classes)) != len(classes):
                raise ProtocolError(f"session {t} repeats a class: {classes}")
            overlap = seen & set(classes)
            if overlap:
                raise ProtocolError(f"session {t} reuses classes {sorted(overlap)}")
            seen.update(classes)

    @property
    def num_sessions(self) -> int:
        """Number of sessions including the base session"""
        return 1 + len(self.sessions)

    def session_classes(self, t) -> List[int]:
        if t == 0:
            return list(self.base_classes)
        return list(self.sessions[t - 1].classes)

    def seen_classes(self, t) -> List[int]:
        """Classes of sessions 0..t, in introduction order"""
        seen = []
        for i in range(t + 1):
            seen.extend(self.session_classes(i))
        return seen

    def class_sessions(self, t=None) -> Dict[int, int]:
        """Map class id -> introducing session, up to session t (default all)"""
        last = self.num_sessions - 1 if t is None else t
        return {c: i for i in range(last + 1) for c in self.session_classes(i)}

    def to_dict(self):
        return {
            "base_classes": list(self.base_classes),
            "sessions": [{"classes": list(s.classes), "shots": s.shots} for s in self.sessions],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, description):
        return cls(
            base_classes=list(description["base_classes"]),
            sessions=[SessionSpec(list(s["classes"]), int(s["shots"])) for s in description["sessions"]],
            seed=int(description.get("seed", 0)),
        )


def make_protocol(
    dataset: SplitDataset,
    base_class_count: int,
    sessions: int,
    ways: int,
    shots: int,
    class_order: Union[str, Sequence[int]] = "default",
    seed: int = 0,
):
    """
    Split a dataset into a base session and `sessions` N-way F-shot sessions

    Parameters
    ----------
    dataset : SplitDataset
    base_class_count : int
        number of classes in the base session
    sessions : int
        number of incremental user sessions (0 for base only)
    ways : int
        new classes per user session, N
    shots : int
        training samples per new class, F
    class_order : "default" or list of class ids
        "default" orders classes by ascending id; a list re-assigns classes
        to sessions in the given order
    seed : int
        drives which `shots` samples each user session receives

    Returns
    -------
    protocol, subsets : ContinualProtocol, List[List[SkeletonSequence]]
        subsets[t] holds the training sequences of session t
    """
    if base_class_count < 1:
        raise ConfigurationError("protocol.base_classes", "must be >= 1")
    if sessions < 0:
        raise ConfigurationError("protocol.sessions", "must be >= 0")
    if sessions > 0 and ways < 1:
        raise ConfigurationError("protocol.ways", "must be >= 1")
    if sessions > 0 and shots < 1:
        raise ConfigurationError("protocol.shots", "must be >= 1")

    train_by_class = dataset.train_by_class
    available = sorted(train_by_class)
    if isinstance(class_order, str):
        if class_order != "default":
            raise ConfigurationError("protocol.class_order", f"unknown order {class_order!r}")
        order = available
    else:
        order = [int(c) for c in class_order]
        if len(set(order)) != len(order):
            raise ConfigurationError("protocol.class_order", "repeats a class id")
        missing = sorted(set(order) - set(available))
        if missing:
            raise ProtocolError(f"class_order names classes without training data: {missing}")

    needed = base_class_count + sessions * ways
    if needed > len(order):
        raise ProtocolError(
            f"protocol needs {needed} classes ({base_class_count} base + {sessions}x{ways}), "
            f"only {len(order)} available"
        )

    base = order[:base_class_count]
    user_sessions = [
        SessionSpec(order[base_class_count + i * ways: base_class_count + (i + 1) * ways], shots)
        for i in range(sessions)
    ]
    protocol = ContinualProtocol(base, user_sessions, seed=seed)

    subsets = [[seq for c in base for seq in train_by_class[c]]]
    for t, session in enumerate(user_sessions, start=1):
        subset = []
        for class_id in session.classes:
            pool = train_by_class[class_id]
            if shots > len(pool):
                raise ProtocolError(
                    f"class {class_id} has {len(pool)} training samples, session {t} needs {shots}"
                )
            rng = numpy_rng(seed, "shots", t, class_id)
            chosen = sorted(rng.choice(len(pool), size=shots, replace=False).tolist())
            subset.extend(pool[i] for i in chosen)
        subsets.append(subset)

    missing_test = sorted(set(protocol.seen_classes(protocol.num_sessions - 1)) - set(dataset.test_by_class))
    if missing_test:
        raise ProtocolError(f"test split lacks classes {missing_test}")

    LOGGER.info(
        "Protocol: %d base classes, %d sessions of %d-way %d-shot",
        len(base), sessions, ways, shots,
    )
    return protocol, subsets
