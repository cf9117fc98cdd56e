# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

from .classifier import ClassifierHead, LinearHead, CosineHead, build_head, expand_classifier
from .backbone import BackboneConfig, BackboneModel, apply_freeze_policy
from .codebook import (
    OrderedSelection,
    PromptCodebook,
    query,
    ordered_select,
    gather_prompts,
    clustering_loss,
    expand_pool,
)
from .attachment import PromptAttachment, attach
