# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import random

import pytest

from prompt_offset.exceptions import ContractError
from prompt_offset.metrics.forgetting import AccuracyHistory, bwf


def _history(entries):
    history = AccuracyHistory()
    for (l, j), value in entries.items():
        history.record(l, j, value)
    return history


def test_three_tasks():
    history = _history({(1, 1): 80, (2, 1): 70, (2, 2): 60, (3, 1): 60, (3, 2): 50, (3, 3): 90})
    assert bwf(history, 3) == pytest.approx(15.0)


def test_improvement_is_negative():
    assert bwf(_history({(1, 1): 50, (2, 1): 60, (2, 2): 40}), 2) == pytest.approx(-10.0)


def test_constant_history():
    entries = {(l, j): 42.0 for l in range(1, 6) for j in range(1, l + 1)}
    assert bwf(_history(entries), 5) == 0.0


@pytest.mark.parametrize("k", [0, 1])
def test_needs_two_tasks(k):
    with pytest.raises(ContractError):
        bwf(_history({(1, 1): 50}), k)


def test_two_tasks_reduce_to_difference():
    rng = random.Random(0)
    for _ in range(100):
        first, second = rng.uniform(0, 100), rng.uniform(0, 100)
        history = _history({(1, 1): first, (2, 1): second, (2, 2): rng.uniform(0, 100)})
        assert bwf(history, 2) == pytest.approx(first - second)


def test_missing_entry():
    with pytest.raises(ContractError):
        bwf(_history({(1, 1): 50}), 2)


@pytest.mark.parametrize("l,j,value", [(1, 2, 50.0), (0, 0, 50.0), (1, 1, 101.0), (1, 1, -1.0)])
def test_invalid_entries(l, j, value):
    with pytest.raises(ContractError):
        AccuracyHistory().record(l, j, value)


def test_record_session_and_dict():
    history = AccuracyHistory()
    history.record_session(0, {0: 80.0})
    history.record_session(1, {0: 70.0, 1: 60.0})
    assert history.get(2, 1) == 70.0
    assert history.last_task == 2
    assert (2, 2) in history
    restored = AccuracyHistory.from_dict(history.to_dict())
    assert restored.to_dict() == history.to_dict()
    assert bwf(restored, 2) == pytest.approx(10.0)
