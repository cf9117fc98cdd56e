# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
synthetic.py

Deterministic synthetic skeleton action benchmark. Every class is a motion
primitive: joint j of class c oscillates around a shared base pose as

    base[j] + A_c * sin(omega_c * frame + phi[c, j]) * d[c, j]

with a unit direction d[c, j], plus isotropic Gaussian noise. Frequencies,
phases, directions and amplitudes (A_c in [0.5, 1.5]) are drawn from the seed.
"""

import logging

import numpy as np

from prompt_offset.data.protocol import SplitDataset
from prompt_offset.data.skeleton import SkeletonSequence
from prompt_offset.exceptions import ConfigurationError
from prompt_offset.utils import numpy_rng

LOGGER = logging.getLogger(__name__)

AMPLITUDE_RANGE = (0.5, 1.5)
FREQUENCY_RANGE = (0.2, 1.6)


def class_templates(topology, class_count, T, seed):
    """
    Noise-free class trajectories

    Returns
    -------
    templates : np.ndarray
        array of shape class_count x T x J x 3
    """
    rng = numpy_rng(seed, "synthetic-classes")
    J = topology.joint_count
    base_pose = np.zeros((J, 3))
    base_pose[:, 1] = 0.25 * topology.depth()
    base_pose += rng.normal(scale=0.1, size=(J, 3))

    omegas = rng.uniform(*FREQUENCY_RANGE, size=class_count)
    amplitudes = rng.uniform(*AMPLITUDE_RANGE, size=class_count)
    phases = rng.uniform(0.0, 2 * np.pi, size=(class_count, J))
    directions = rng.normal(size=(class_count, J, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)

    frames = np.arange(T, dtype=np.float64)
    # class_count x T x J
    waves = np.sin(omegas[:, None, None] * frames[None, :, None] + phases[:, None, :])
    return (
        base_pose[None, None]
        + amplitudes[:, None, None, None] * waves[..., None] * directions[:, None]
    )


def synth_generate(topology, class_count, per_class_train, per_class_test, T, noise_sigma, seed):
    """
    Generate a train/test split of synthetic skeleton actions

    Parameters
    ----------
    topology : SkeletonTopology
    class_count : int
        number of classes, >= 2
    per_class_train, per_class_test : int
        samples per class in each split
    T : int
        frames per sequence, >= 2
    noise_sigma : float
        standard deviation of the additive Gaussian noise, >= 0
    seed : int

    Returns
    -------
    dataset : SplitDataset
        train and test sequences, class ids 0..class_count-1,
        ordered by class then sample
    """
    if class_count < 2:
        raise ConfigurationError("dataset.classes", "must be >= 2")
    if per_class_train < 1:
        raise ConfigurationError("dataset.per_class_train", "must be >= 1")
    if per_class_test < 1:
        raise ConfigurationError("dataset.per_class_test", "must be >= 1")
    if T < 2:
        raise ConfigurationError("dataset.frames", "must be >= 2")
    if not noise_sigma >= 0:
        raise ConfigurationError("dataset.noise_sigma", "must be >= 0")
    topology.validate()

    templates = class_templates(topology, class_count, T, seed)
    splits = {"train": [], "test": []}
    for split, count in (("train", per_class_train), ("test", per_class_test)):
        for class_id in range(class_count):
            rng = numpy_rng(seed, "synthetic-noise", split, class_id)
            noise = rng.normal(scale=noise_sigma, size=(count,) + templates.shape[1:])
            for i in range(count):
                splits[split].append(
                    SkeletonSequence(templates[class_id] + noise[i], class_id, subject_id=i)
                )

    LOGGER.info(
        "Generated %d train / %d test synthetic sequences over %d classes",
        len(splits["train"]), len(splits["test"]), class_count,
    )
    return SplitDataset(train=splits["train"], test=splits["test"], topology=topology)
