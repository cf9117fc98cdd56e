# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
skeleton.py

Skeleton sequences and joint topologies. A `SkeletonSequence` is one action
clip of shape T x J x 3; a `SkeletonTopology` is the undirected joint graph
shared by every clip of a benchmark.

usage:

>>> from prompt_offset.data.skeleton import get_topology
>>> topo = get_topology("ntu-rgbd")
>>> topo.joint_count
25
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import networkx as nx
import numpy as np

from prompt_offset.exceptions import ConfigurationError, ContractError

LOGGER = logging.getLogger(__name__)

# 1-indexed joint pairs of the 25 joint Kinect v2 body skeleton
NTU_EDGES_1 = (
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
    (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
    (24, 25), (25, 12),
)

# wrist 0, palm 1, then four joints per finger from thumb to pinky
SHREC_EDGES = (
    (0, 1), (0, 2), (2, 3), (3, 4), (4, 5),
    (1, 6), (6, 7), (7, 8), (8, 9),
    (1, 10), (10, 11), (11, 12), (12, 13),
    (1, 14), (14, 15), (15, 16), (16, 17),
    (1, 18), (18, 19), (19, 20), (20, 21),
)


@dataclass
class SkeletonSequence:
    """One action clip: frames of shape T x J x 3 and its class label"""

    frames: np.ndarray
    class_id: int
    subject_id: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ContractError(f"frames must be T x J x 3, got {self.frames.shape}")
        if self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ContractError(f"frames must have T >= 1 and J >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError("frames contain non-finite coordinates")
        if self.class_id < 0:
            raise ContractError(f"class_id must be non-negative, got {self.class_id}")

    @property
    def shape(self) -> Tuple[int, int]:
        """(T, J)"""
        return self.frames.shape[0], self.frames.shape[1]


@dataclass
class SkeletonTopology:
    """Undirected joint graph with J joints"""

    joint_count: int
    edges: List[Tuple[int, int]] = field(default_factory=list)
    name: str = "custom"

    def __post_init__(self):
        self.edges = [tuple(int(v) for v in edge) for edge in self.edges]
        self.validate()

    def validate(self):
        """Raise ConfigurationError unless the graph is a valid connected skeleton"""
        if self.joint_count < 1:
            raise ConfigurationError("topology.joint_count", "must be >= 1")
        for u, v in self.edges:
            if not (0 <= u < self.joint_count and 0 <= v < self.joint_count):
                raise ConfigurationError("topology.edges", f"edge ({u}, {v}) out of range [0, {self.joint_count})")
            if u == v:
                raise ConfigurationError("topology.edges", f"self-loop at joint {u}")
        if not nx.is_connected(self.graph):
            raise ConfigurationError("topology.edges", "joint graph is not connected")

    @property
    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.joint_count))
        graph.add_edges_from(self.edges)
        return graph

    def normalized_adjacency(self) -> np.ndarray:
        """
        Symmetric-normalized adjacency with self-loops,
        D^-1/2 (A + I) D^-1/2, as a J x J float array
        """
        adj = nx.to_numpy_array(self.graph, nodelist=range(self.joint_count))
        adj = adj + np.eye(self.joint_count)
        inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1))
        return adj * inv_sqrt[:, None] * inv_sqrt[None, :]

    def depth(self, root=0) -> np.ndarray:
        """Hop distance of every joint from `root`"""
        lengths = nx.single_source_shortest_path_length(self.graph, root)
        return np.array([lengths[j] for j in range(self.joint_count)])


def chain_topology(joint_count):
    """Joints 0-1-2-...-(J-1) connected in a line"""
    return SkeletonTopology(
        joint_count, [(j, j + 1) for j in range(joint_count - 1)], name="chain"
    )


def ntu_topology():
    return SkeletonTopology(25, [(u - 1, v - 1) for u, v in NTU_EDGES_1], name="ntu-rgbd")


def shrec_topology():
    return SkeletonTopology(22, list(SHREC_EDGES), name="shrec-hand")


TOPOLOGIES = {
    "chain": chain_topology,
    "ntu-rgbd": ntu_topology,
    "shrec-hand": shrec_topology,
}

FORMAT_TOPOLOGY = {
    "ntu-style": "ntu-rgbd",
    "shrec-style": "shrec-hand",
}


def get_topology(name, joint_count=None):
    """
    Build a named topology

    Parameters
    ----------
    name : str
        one of `TOPOLOGIES`
    joint_count : int (optional)
        required for 'chain', ignored otherwise

    Returns
    -------
    topology : SkeletonTopology
    """
    if name not in TOPOLOGIES:
        raise ConfigurationError("dataset.topology", f"unknown topology {name!r}, choose from {list(TOPOLOGIES)}")
    if name == "chain":
        if joint_count is None:
            raise ConfigurationError("dataset.joints", "chain topology requires a joint count")
        return chain_topology(joint_count)
    return TOPOLOGIES[name]()


def stack_frames(sequences) -> np.ndarray:
    """Stack sequences of identical (T, J) into a float32 B x T x J x 3 array"""
    if not sequences:
        raise ContractError("cannot stack an empty list of sequences")
    shapes = {seq.shape for seq in sequences}
    if len(shapes) != 1:
        raise ContractError(f"sequences disagree on (T, J): {sorted(shapes)}")
    return np.stack([seq.frames for seq in sequences]).astype(np.float32)
