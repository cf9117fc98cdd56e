# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from torch import nn

from prompt_offset.data.protocol import ContinualProtocol
from prompt_offset.data.skeleton import SkeletonTopology
from prompt_offset.metrics.accuracy import SessionReport
from prompt_offset.metrics.forgetting import AccuracyHistory
from prompt_offset.models.attachment import PromptAttachment
from prompt_offset.models.backbone import BackboneModel
from prompt_offset.models.codebook import PromptCodebook
from prompt_offset.training.config import ExperimentConfig

LOGGER = logging.getLogger(__name__)


@dataclass
class PoetState:
    """
    Everything a run carries between sessions. Holds parameters and
    metrics only; session data is never stored.
    """

    config: ExperimentConfig
    protocol: ContinualProtocol
    topology: SkeletonTopology
    backbone: BackboneModel
    codebook: Optional[PromptCodebook] = None
    attachment: Optional[PromptAttachment] = None
    session: int = -1
    history: AccuracyHistory = field(default_factory=AccuracyHistory)
    reports: List[SessionReport] = field(default_factory=list)

    @property
    def seed(self):
        return self.config.train.seed

    @property
    def frames(self):
        return self.config.dataset.frames

    @property
    def prompt_count(self):
        return self.config.train.prompt_count(self.frames)

    def seen_classes(self, t=None):
        return self.protocol.seen_classes(self.session if t is None else t)

    def modules(self) -> Dict[str, nn.Module]:
        modules = {"backbone": self.backbone}
        if self.codebook is not None:
            modules["codebook"] = self.codebook
        if self.attachment is not None:
            modules["attachment"] = self.attachment
        return modules

    def set_mode(self, training=True):
        for module in self.modules().values():
            module.train(training)
