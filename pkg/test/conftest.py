# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import copy

import pytest

from prompt_offset.cli.runner import build_dataset
from prompt_offset.data.protocol import make_protocol
from prompt_offset.training.config import from_dict

TINY_EXPERIMENT = {
    "dataset": {
        "source": "synthetic",
        "topology": "chain",
        "joints": 5,
        "frames": 8,
        "classes": 8,
        "per_class_train": 8,
        "per_class_test": 4,
        "noise_sigma": 0.05,
    },
    "protocol": {"base_classes": 4, "sessions": 2, "ways": 2, "shots": 3},
    "backbone": {"kind": "gcn", "layer_channels": [4, 4, 8], "attach_after_layer": 1, "head_kind": "cosine"},
    "train": {
        "pretrain_epochs": 2,
        "base_epochs": 2,
        "base_batch": 8,
        "session_epochs": 2,
        "session_lr": 0.1,
    },
    "output": {"name": "tiny", "trace": False},
    "seeds": [0],
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on the synthetic benchmark")


def _update(base, overrides):
    for section, values in overrides.items():
        if isinstance(values, dict):
            base.setdefault(section, {}).update(values)
        else:
            base[section] = values
    return base


@pytest.fixture
def tiny_config():
    """Factory of small synthetic experiments, e.g. tiny_config(train={"method": "fe"})"""

    def make(**overrides):
        return from_dict(_update(copy.deepcopy(TINY_EXPERIMENT), overrides))

    return make


@pytest.fixture
def tiny_setup(tiny_config):
    """Factory returning config, dataset, protocol and per-session subsets"""

    def make(seed=0, **overrides):
        config = tiny_config(**overrides).for_seed(seed)
        dataset = build_dataset(config)
        p = config.protocol
        protocol, subsets = make_protocol(
            dataset, p.base_classes, p.sessions, p.ways, p.shots, class_order=p.class_order, seed=seed,
        )
        return config, dataset, protocol, subsets

    return make
