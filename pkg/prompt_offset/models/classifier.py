# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
classifier.py

Classifier heads f_c over pooled backbone features:

 * 'linear'            fully connected layer, all rows trainable
 * 'linear-frozen-old' fully connected layer whose pre-existing rows receive
                       zeroed gradients in user sessions
 * 'cosine'            eta * cos(weight_row, feature) with a learnable scale
                       eta, learned in the base session and frozen afterwards
"""

import logging

import torch
from torch import nn
from torch.nn import functional as F

from prompt_offset.exceptions import ContractError

LOGGER = logging.getLogger(__name__)

HEAD_KINDS = ("linear", "linear-frozen-old", "cosine")
DEFAULT_COSINE_SCALE = 10.0


class ClassifierHead(nn.Module):
    """
    Base class of the classifier heads. Rows are indexed in the order in
    which classes were introduced; `old_rows` is the row count before the
    most recent expansion.
    """

    kind = None

    def __init__(self, in_features, num_classes):
        super().__init__()
        if num_classes < 1:
            raise ContractError(f"a classifier needs at least one class, got {num_classes}")
        self.in_features = in_features
        self.weight = nn.Parameter(torch.empty(num_classes, in_features))
        self.old_rows = num_classes
        self.frozen_rows = 0
        self.weight.register_hook(self._mask_frozen_rows)

    @property
    def num_classes(self):
        return self.weight.shape[0]

    def _mask_frozen_rows(self, grad):
        if not self.frozen_rows:
            return grad
        keep = torch.arange(grad.shape[0], device=grad.device) >= self.frozen_rows
        keep = keep.view(-1, *([1] * (grad.dim() - 1)))
        return torch.where(keep, grad, torch.zeros_like(grad))

    def reset_parameters(self, generator=None):
        bound = 1.0 / self.in_features ** 0.5
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=generator)

    def freeze_old_rows(self):
        """Zero the gradients of all rows that existed before the last expansion"""
        self.frozen_rows = self.old_rows

    def check_rows(self, expected_classes):
        if expected_classes is not None and expected_classes != self.num_classes:
            raise ContractError(
                f"classifier has {self.num_classes} rows but {expected_classes} classes are seen"
            )

    def expanded(self, new_class_count):
        """See `expand_classifier`"""
        raise NotImplementedError


class LinearHead(ClassifierHead):
    kind = "linear"

    def __init__(self, in_features, num_classes, freeze_old=False):
        super().__init__(in_features, num_classes)
        self.kind = "linear-frozen-old" if freeze_old else "linear"
        self.bias = nn.Parameter(torch.zeros(num_classes))
        self.bias.register_hook(self._mask_frozen_rows)
        self.reset_parameters()

    def forward(self, features):
        return F.linear(features, self.weight, self.bias)

    def expanded(self, new_class_count):
        head = LinearHead(self.in_features, self.num_classes + new_class_count,
                          freeze_old=self.kind == "linear-frozen-old")
        with torch.no_grad():
            head.weight.copy_(mean_expand(self.weight, new_class_count))
            head.bias.copy_(mean_expand(self.bias, new_class_count))
        return head


class CosineHead(ClassifierHead):
    kind = "cosine"

    def __init__(self, in_features, num_classes, scale=DEFAULT_COSINE_SCALE, learn_scale=True):
        super().__init__(in_features, num_classes)
        self.scale = nn.Parameter(torch.tensor(float(scale)), requires_grad=learn_scale)
        self.reset_parameters()

    def forward(self, features):
        return self.scale * F.linear(F.normalize(features, dim=-1), F.normalize(self.weight, dim=-1))

    def freeze_scale(self):
        self.scale.requires_grad_(False)

    def expanded(self, new_class_count):
        head = CosineHead(self.in_features, self.num_classes + new_class_count,
                          learn_scale=self.scale.requires_grad)
        with torch.no_grad():
            head.weight.copy_(mean_expand(self.weight, new_class_count))
            head.scale.copy_(self.scale)
        return head


def mean_expand(rows, new_class_count):
    """Append `new_class_count` copies of the mean of `rows` along dim 0"""
    new = rows.mean(dim=0, keepdim=True).expand(new_class_count, *rows.shape[1:])
    return torch.cat([rows, new], dim=0)


def build_head(kind, in_features, num_classes, generator=None):
    """Construct a head of `kind` with seed-driven fan-in uniform weights"""
    if kind in ("linear", "linear-frozen-old"):
        head = LinearHead(in_features, num_classes, freeze_old=kind == "linear-frozen-old")
    elif kind == "cosine":
        head = CosineHead(in_features, num_classes)
    else:
        raise ContractError(f"unknown classifier kind {kind!r}, choose from {HEAD_KINDS}")
    head.reset_parameters(generator)
    return head


def expand_classifier(head, new_class_count):
    """
    Expand a head by N classes

    Parameters
    ----------
    head : ClassifierHead
    new_class_count : int
        N >= 1

    Returns
    -------
    expanded : ClassifierHead
        old rows copied verbatim, each new row (and bias) set to the mean of
        all old rows; `old_rows` records the pre-expansion row count
    """
    if new_class_count < 1:
        raise ContractError(f"expand_classifier needs N >= 1, got {new_class_count}")
    expanded = head.expanded(new_class_count)
    expanded.old_rows = head.num_classes
    LOGGER.debug("Expanded %s head %d -> %d rows", head.kind, head.num_classes, expanded.num_classes)
    return expanded
