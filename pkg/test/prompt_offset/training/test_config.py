# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import pytest

from prompt_offset.exceptions import ConfigurationError
from prompt_offset.training.config import (
    OUTPUT_ROOT_ENV,
    from_dict,
    load_config,
    load_preset,
    save_config,
)


def test_synthetic_preset():
    config = load_preset("synthetic")
    assert config.dataset.joints == 25
    assert config.dataset.frames == 16
    assert config.protocol.class_count == 14
    assert config.train.method == "poet"
    assert config.train.initial_pool_size(config.dataset.frames) == 16
    assert config.seeds == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("name", ["ntu", "shrec"])
def test_file_presets_need_data(name, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ConfigurationError) as c_err:
        load_preset(name)
    assert c_err.value.key == "dataset.train_path"


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        load_preset("imagenet")


@pytest.mark.parametrize(
    "description,key",
    [
        ({"trainer": {}}, "trainer"),
        ({"train": {"learning_rate": 0.1}}, "train.learning_rate"),
        ({"train": {"sort": "yes"}}, "train.sort"),
        ({"train": {"base_epochs": 2.5}}, "train.base_epochs"),
        ({"train": {"lam": True}}, "train.lam"),
        ({"train": {"lam": -0.1}}, "train.lam"),
        ({"train": {"method": "replay"}}, "train.method"),
        ({"train": {"pool_size": 4}}, "train.pool_size"),
        ({"train": {"session_lr": 0}}, "train.session_lr"),
        ({"backbone": {"layer_channels": 64}}, "backbone.layer_channels"),
        ({"dataset": {"topology": "ntu-rgbd", "joints": 10}}, "dataset.joints"),
        ({"protocol": {"sessions": 3}}, "protocol.sessions"),
        ({"seeds": [1, 1]}, "seeds"),
        ({"output": {"name": "a/b"}}, "output.name"),
    ],
)
def test_invalid_values_name_key(description, key):
    with pytest.raises(ConfigurationError) as c_err:
        from_dict(description)
    assert c_err.value.key == key


def test_numbers_coerced():
    config = from_dict({"train": {"lam": 1, "pool_size": None}})
    assert isinstance(config.train.lam, float)
    assert config.train.pool_size is None


def test_hash_ignores_seed_and_output():
    config = from_dict({})
    assert config.for_seed(3).config_hash == config.config_hash
    assert config.for_seed(3).train.seed == 3
    renamed = config.with_overrides("output", name="other", root="/tmp/elsewhere")
    assert renamed.config_hash == config.config_hash
    ablation = config.with_overrides("train", sort=False)
    assert ablation.config_hash != config.config_hash
    assert ablation.train.sort is False
    assert config.train.sort is True


def test_root_dir(monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    config = from_dict({})
    assert str(config.output.root_dir) == "runs"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "/data/poet")
    assert str(config.output.root_dir) == "/data/poet"
    assert str(config.with_overrides("output", root="out").output.root_dir) == "out"


def test_save_and_load(tmp_path, tiny_config):
    config = tiny_config(train={"method": "fe"})
    path = save_config(config, tmp_path / "config.yml")
    loaded = load_config(path)
    assert loaded == config
    assert loaded.config_hash == config.config_hash


def test_invalid_yaml(tmp_path):
    path = tmp_path / "broken.yml"
    path.write_text("train: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_config(path)
