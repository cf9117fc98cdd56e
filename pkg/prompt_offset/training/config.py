# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
config.py

Experiment configuration. An experiment is a YAML file with the sections

    dataset:   where sequences come from (synthetic generator or text files)
    protocol:  base classes and N-way F-shot user sessions
    backbone:  BackboneConfig
    train:     TrainConfig (method, ablation switches, schedules)
    output:    run directory root and artifact switches
    seeds:     list of seeds, one run each

Each section is a flat `key: value` mapping. Unknown keys and invalid values
raise ConfigurationError naming the key before any training starts.

usage:

>>> config = load_config("experiment.yml")
>>> config = load_preset("synthetic")
"""

import json
import logging
import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Union

import yaml

from prompt_offset.data.skeleton import TOPOLOGIES, get_topology
from prompt_offset.data.loaders import FORMAT_JOINTS
from prompt_offset.exceptions import ConfigurationError
from prompt_offset.models.attachment import ATTACH_MODES
from prompt_offset.models.backbone import BackboneConfig
from prompt_offset.utils import static_hash

LOGGER = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"
OUTPUT_ROOT_ENV = "POET_OUTPUT_ROOT"

METHODS = ("poet", "ft", "fe", "fe-frozen")
POOL_MODES = ("fixed", "expand")
DATASET_SOURCES = ("synthetic", "files")


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    frames: int = 16
    # synthetic generator
    topology: str = "chain"
    joints: int = 25
    classes: int = 14
    per_class_train: int = 30
    per_class_test: int = 20
    noise_sigma: float = 0.05
    seed: int = 0
    # skeleton text files
    format: str = "ntu-style"
    train_path: str = ""
    test_path: str = ""

    def validate(self):
        if self.source not in DATASET_SOURCES:
            raise ConfigurationError("dataset.source", f"must be one of {DATASET_SOURCES}")
        if self.frames < 1:
            raise ConfigurationError("dataset.frames", "must be >= 1")
        if self.source == "synthetic":
            if self.topology not in TOPOLOGIES:
                raise ConfigurationError("dataset.topology", f"must be one of {sorted(TOPOLOGIES)}")
            if self.joints < 2:
                raise ConfigurationError("dataset.joints", "must be >= 2")
            if self.topology != "chain" and get_topology(self.topology).joint_count != self.joints:
                raise ConfigurationError("dataset.joints", f"topology {self.topology!r} has a fixed joint count")
            if self.classes < 1:
                raise ConfigurationError("dataset.classes", "must be >= 1")
            if self.per_class_train < 1 or self.per_class_test < 1:
                raise ConfigurationError("dataset.per_class_train", "train and test sizes must be >= 1")
            if self.noise_sigma < 0:
                raise ConfigurationError("dataset.noise_sigma", "must be >= 0")
        else:
            if self.format not in FORMAT_JOINTS:
                raise ConfigurationError("dataset.format", f"must be one of {sorted(FORMAT_JOINTS)}")
            if self.topology not in TOPOLOGIES:
                raise ConfigurationError("dataset.topology", f"must be one of {sorted(TOPOLOGIES)}")
            if self.topology != "chain" and get_topology(self.topology).joint_count != FORMAT_JOINTS[self.format]:
                raise ConfigurationError("dataset.topology", f"joint count differs from format {self.format!r}")
            for key in ("train_path", "test_path"):
                path = getattr(self, key)
                if not path or not Path(path).exists():
                    raise ConfigurationError(f"dataset.{key}", f"file {path!r} does not exist")
        return self

    def build_topology(self):
        """Joint graph of the configured sequences"""
        joints = self.joints if self.source == "synthetic" else FORMAT_JOINTS[self.format]
        return get_topology(self.topology, joint_count=joints)


@dataclass(frozen=True)
class ProtocolConfig:
    base_classes: int = 10
    sessions: int = 2
    ways: int = 2
    shots: int = 5
    class_order: Union[str, List[int]] = "default"

    def validate(self):
        if self.base_classes < 1:
            raise ConfigurationError("protocol.base_classes", "must be >= 1")
        if self.sessions < 0:
            raise ConfigurationError("protocol.sessions", "must be >= 0")
        if self.sessions and (self.ways < 1 or self.shots < 1):
            raise ConfigurationError("protocol.ways", "ways and shots must be >= 1")
        if isinstance(self.class_order, str) and self.class_order != "default":
            raise ConfigurationError("protocol.class_order", "must be 'default' or a list of class ids")
        return self

    @property
    def class_count(self):
        return self.base_classes + self.sessions * self.ways


@dataclass(frozen=True)
class TrainConfig:
    """
    method 'poet' trains prompts; the baselines train without a codebook:
    'ft' tunes everything in user sessions, 'fe' only the classifier,
    'fe-frozen' only the new classifier rows.
    """

    method: str = "poet"
    pool_mode: str = "fixed"
    pool_size: Optional[int] = None
    expand_prompts: int = 4
    attach_mode: str = "add"
    sort: bool = True
    coupled: bool = True
    clustering: bool = True
    qa_update: bool = True
    lam: float = 0.1
    pretrain_epochs: int = 30
    pretrain_lr: float = 0.1
    base_epochs: int = 10
    base_lr: float = 0.1
    base_batch: int = 32
    session_epochs: int = 10
    session_lr: float = 0.1
    session_batch: Optional[int] = None
    adaptor_lr: float = 0.01
    seed: int = 0

    def validate(self, frames=None):
        if self.method not in METHODS:
            raise ConfigurationError("train.method", f"must be one of {METHODS}")
        if self.pool_mode not in POOL_MODES:
            raise ConfigurationError("train.pool_mode", f"must be one of {POOL_MODES}")
        if self.attach_mode not in ATTACH_MODES:
            raise ConfigurationError("train.attach_mode", f"must be one of {ATTACH_MODES}")
        if self.pool_mode == "expand" and self.expand_prompts < 1:
            raise ConfigurationError("train.expand_prompts", "must be >= 1 in expand mode")
        if self.pool_size is not None:
            if self.pool_size < 1:
                raise ConfigurationError("train.pool_size", "must be >= 1")
            if frames is not None and self.pool_size < self.prompt_count(frames):
                raise ConfigurationError("train.pool_size", f"must hold at least {self.prompt_count(frames)} prompts")
        if frames is not None and self.pool_mode == "expand" and self.expand_prompts > self.prompt_count(frames):
            raise ConfigurationError("train.expand_prompts", "cannot exceed the number of selected prompts")
        if self.lam < 0:
            raise ConfigurationError("train.lam", "must be >= 0")
        for key in ("pretrain_epochs", "base_epochs", "session_epochs"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"train.{key}", "must be >= 0")
        for key in ("pretrain_lr", "base_lr", "session_lr", "adaptor_lr"):
            if getattr(self, key) <= 0:
                raise ConfigurationError(f"train.{key}", "must be > 0")
        if self.base_batch < 1:
            raise ConfigurationError("train.base_batch", "must be >= 1")
        if self.session_batch is not None and self.session_batch < 1:
            raise ConfigurationError("train.session_batch", "must be >= 1")
        return self

    @property
    def uses_prompts(self):
        return self.method == "poet"

    def prompt_count(self, frames):
        """Prompts selected per input: T, or 1 for the single-prompt attachment"""
        return 1 if self.attach_mode == "add-single" else frames

    def initial_pool_size(self, frames):
        return self.pool_size or self.prompt_count(frames)

    def batch_for_session(self, ways, shots):
        """Session batch; defaults to one batch of ways * shots samples"""
        return self.session_batch or ways * shots


@dataclass(frozen=True)
class OutputConfig:
    root: str = ""
    name: str = "poet"
    trace: bool = True
    selection_log: bool = True
    checkpoints: bool = True

    def validate(self):
        if not self.name or "/" in self.name:
            raise ConfigurationError("output.name", "must be a non-empty name without '/'")
        return self

    @property
    def root_dir(self):
        return Path(self.root or os.environ.get(OUTPUT_ROOT_ENV, "") or "runs")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seeds: List[int] = field(default_factory=lambda: [0])

    def validate(self):
        self.dataset.validate()
        self.protocol.validate()
        self.backbone.validate()
        self.train.validate(frames=self.dataset.frames)
        self.output.validate()
        if not self.seeds:
            raise ConfigurationError("seeds", "must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds", "must not repeat")
        if self.dataset.source == "synthetic" and self.protocol.class_count > self.dataset.classes:
            raise ConfigurationError(
                "protocol.sessions",
                f"needs {self.protocol.class_count} classes, dataset.classes is {self.dataset.classes}",
            )
        if self.dataset.source == "synthetic" and self.protocol.shots > self.dataset.per_class_train:
            raise ConfigurationError("protocol.shots", "exceeds dataset.per_class_train")
        return self

    def resolved(self):
        """Plain dict of every setting, as archived in a run directory"""
        return {
            "dataset": asdict(self.dataset),
            "protocol": asdict(self.protocol),
            "backbone": asdict(self.backbone),
            "train": asdict(self.train),
            "output": asdict(self.output),
            "seeds": list(self.seeds),
        }

    @property
    def config_hash(self):
        """Stable hash of the settings that determine results"""
        settings = self.resolved()
        settings.pop("output")
        settings.pop("seeds")
        settings["train"].pop("seed")
        return static_hash((json.dumps(settings, sort_keys=True),))[:12]

    def for_seed(self, seed):
        return replace(self, train=replace(self.train, seed=seed))

    def with_overrides(self, section, **kwargs):
        """Copy with some keys of one section replaced, e.g. ('train', method='fe')"""
        return from_dict(_merge(self.resolved(), {section: kwargs}))


def _merge(base, update):
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _coerce(key, value, annotation):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in (a for a in args if a is not type(None)):
            try:
                return _coerce(key, value, arg)
            except ConfigurationError as c_err:
                errors.append(c_err.constraint)
        raise ConfigurationError(key, " or ".join(errors))
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(key, f"expected a list, got {value!r}")
        return [_coerce(key, v, args[0]) for v in value] if args else list(value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(key, f"expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(key, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(key, f"expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigurationError(key, f"expected a string, got {value!r}")
        return value
    return value


def _section(cls, name, values):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigurationError(name, "must be a mapping of key: value")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"{name}.{unknown[0]}", "unknown key")
    hints = typing.get_type_hints(cls)
    kwargs = {k: _coerce(f"{name}.{k}", v, hints[k]) for k, v in values.items()}
    return cls(**kwargs)


SECTIONS = {
    "dataset": DatasetConfig,
    "protocol": ProtocolConfig,
    "backbone": BackboneConfig,
    "train": TrainConfig,
    "output": OutputConfig,
}


def from_dict(description, validate=True):
    """
    Build an ExperimentConfig from a parsed YAML document, validated unless
    `validate` is False (e.g. a checkpoint whose data files moved)
    """
    if not isinstance(description, dict):
        raise ConfigurationError("<root>", "config must be a mapping of sections")
    unknown = sorted(set(description) - set(SECTIONS) - {"seeds"})
    if unknown:
        raise ConfigurationError(unknown[0], "unknown section")
    sections = {name: _section(cls, name, description.get(name)) for name, cls in SECTIONS.items()}
    seeds = _coerce("seeds", description.get("seeds", [0]), List[int])
    config = ExperimentConfig(seeds=seeds, **sections)
    return config.validate() if validate else config


def load_config(path):
    """Load and validate a YAML experiment file"""
    with open(path, "r", encoding="utf-8") as fin:
        try:
            description = yaml.safe_load(fin)
        except yaml.YAMLError as y_err:
            raise ConfigurationError(str(path), f"invalid YAML: {y_err}") from y_err
    config = from_dict(description or {})
    LOGGER.info("Loaded config %s (hash %s)", path, config.config_hash)
    return config


def load_preset(name):
    path = PRESET_DIR / f"{name}.yml"
    if not path.exists():
        presets = sorted(p.stem for p in PRESET_DIR.glob("*.yml"))
        raise ConfigurationError("preset", f"unknown preset {name!r}, choose from {presets}")
    return load_config(path)


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fout:
        yaml.safe_dump(config.resolved(), fout, sort_keys=False)
    return path
