# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import numpy as np
import pytest

from prompt_offset.cli.runner import build_dataset
from prompt_offset.data.protocol import make_protocol
from prompt_offset.training.config import load_preset
from prompt_offset.training.trainer import evaluate, run_protocol, train_base


def _final_reports(config):
    reports = []
    for seed in config.seeds:
        seeded = config.for_seed(seed)
        dataset = build_dataset(seeded)
        p = seeded.protocol
        protocol, subsets = make_protocol(
            dataset, p.base_classes, p.sessions, p.ways, p.shots, class_order=p.class_order, seed=seed,
        )
        reports.append(run_protocol(seeded, protocol, subsets, dataset)[-1])
    return reports


@pytest.mark.slow
def test_prompts_beat_baselines_on_synthetic():
    config = load_preset("synthetic")
    assert len(config.seeds) == 5
    poet = _final_reports(config)
    fe = _final_reports(config.with_overrides("train", method="fe"))
    unsorted = _final_reports(config.with_overrides("train", sort=False))

    assert np.mean([r.a_hm for r in poet]) > np.mean([r.a_hm for r in fe])
    assert np.mean([r.new for r in poet]) > np.mean([r.new for r in unsorted])


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_base_session_learns_synthetic(seed):
    config = load_preset("synthetic").for_seed(seed)
    dataset = build_dataset(config)
    p = config.protocol
    protocol, subsets = make_protocol(dataset, p.base_classes, p.sessions, p.ways, p.shots, seed=seed)
    state, _ = train_base(config, protocol, subsets[0], dataset.topology)
    report = evaluate(state, dataset.test, 0)
    assert report.avg >= 90.0
