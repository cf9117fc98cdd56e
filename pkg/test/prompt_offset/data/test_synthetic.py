# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import numpy as np
import pytest

from prompt_offset.data.skeleton import SkeletonTopology, get_topology
from prompt_offset.data.synthetic import synth_generate
from prompt_offset.exceptions import ConfigurationError


def _frames(sequences):
    return np.stack([seq.frames for seq in sequences])


def test_same_seed_identical():
    topology = get_topology("chain", joint_count=25)
    first = synth_generate(topology, 4, 5, 3, 16, 0.0, seed=7)
    second = synth_generate(topology, 4, 5, 3, 16, 0.0, seed=7)
    np.testing.assert_array_equal(_frames(first.train), _frames(second.train))
    np.testing.assert_array_equal(_frames(first.test), _frames(second.test))


def test_seed_changes_data():
    topology = get_topology("chain", joint_count=5)
    first = synth_generate(topology, 3, 2, 2, 8, 0.05, seed=0)
    second = synth_generate(topology, 3, 2, 2, 8, 0.05, seed=1)
    assert not np.allclose(_frames(first.train), _frames(second.train))


def test_shapes_and_labels():
    topology = get_topology("ntu-rgbd")
    dataset = synth_generate(topology, 3, 4, 2, 64, 0.05, seed=0)
    assert len(dataset.train) == 12
    assert len(dataset.test) == 6
    assert all(seq.frames.shape == (64, 25, 3) for seq in dataset.train + dataset.test)
    assert [seq.class_id for seq in dataset.train] == [0] * 4 + [1] * 4 + [2] * 4
    assert dataset.classes == [0, 1, 2]


@pytest.mark.parametrize(
    "class_count,noise_sigma,expected",
    [
        (2, 0.0, 1.0),
        (14, 0.05, 0.95),
    ],
)
def test_nearest_class_mean_separable(class_count, noise_sigma, expected):
    topology = get_topology("chain", joint_count=25)
    dataset = synth_generate(topology, class_count, 10, 10, 16, noise_sigma, seed=3)
    train = _frames(dataset.train).reshape(len(dataset.train), -1)
    test = _frames(dataset.test).reshape(len(dataset.test), -1)
    train_labels = np.array([seq.class_id for seq in dataset.train])
    test_labels = np.array([seq.class_id for seq in dataset.test])

    means = np.stack([train[train_labels == c].mean(axis=0) for c in range(class_count)])
    distances = ((test[:, None, :] - means[None]) ** 2).sum(axis=-1)
    accuracy = (distances.argmin(axis=1) == test_labels).mean()
    assert accuracy >= expected


@pytest.mark.parametrize(
    "kwargs",
    [
        {"class_count": 1},
        {"per_class_train": 0},
        {"per_class_test": 0},
        {"T": 1},
        {"noise_sigma": -0.1},
    ],
)
def test_invalid_parameters(kwargs):
    params = {"class_count": 3, "per_class_train": 2, "per_class_test": 2, "T": 8, "noise_sigma": 0.0}
    params.update(kwargs)
    with pytest.raises(ConfigurationError):
        synth_generate(get_topology("chain", joint_count=4), seed=0, **params)


def test_disconnected_topology_rejected():
    with pytest.raises(ConfigurationError):
        SkeletonTopology(4, [(0, 1), (2, 3)])
