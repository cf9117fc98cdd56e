# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

from .config import (
    DatasetConfig,
    ProtocolConfig,
    TrainConfig,
    OutputConfig,
    ExperimentConfig,
    load_config,
    load_preset,
    save_config,
)
from .state import PoetState
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, read_manifest
from .observers import Observer, SelectionLogObserver, TraceObserver
from .trainer import train_base, train_session, run_protocol, evaluate
