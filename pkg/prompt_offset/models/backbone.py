# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
backbone.py

Minimal spatio-temporal graph backbones f = f_c o f_g o f_e with an explicit
split point after which prompts are attached:

 * 'gcn'               blocks of normalized-adjacency joint aggregation, a
                       per-joint temporal convolution (kernel 3), batch
                       normalization and ReLU
 * 'graph-transformer' blocks of per-frame spatial self-attention followed by
                       per-joint temporal self-attention at a constant width

f_e holds the input batch normalization and layers 1..attach_after_layer,
f_g the remaining layers; features are mean pooled over (T, J) before the
classifier head. Batch statistics make f_e pure only in eval mode, which
frozen extractors and the codebook's query copy are always in.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
from torch import nn

from prompt_offset.data.skeleton import SkeletonSequence
from prompt_offset.exceptions import ConfigurationError, ContractError
from prompt_offset.models.classifier import HEAD_KINDS, build_head
from prompt_offset.utils import derive_seed

LOGGER = logging.getLogger(__name__)

BACKBONE_KINDS = ("gcn", "graph-transformer")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "gcn"
    layer_channels: List[int] = field(default_factory=lambda: [64, 64, 128, 256])
    attach_after_layer: int = 1
    dropout: float = 0.0
    heads: int = 1
    head_kind: str = "linear"

    @property
    def embed_dim(self):
        """C_e, the channel width at the split point"""
        return self.layer_channels[self.attach_after_layer - 1]

    @property
    def feature_dim(self):
        return self.layer_channels[-1]

    def validate(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigurationError("backbone.kind", f"must be one of {BACKBONE_KINDS}")
        if len(self.layer_channels) < 2 or any(c < 1 for c in self.layer_channels):
            raise ConfigurationError("backbone.layer_channels", "needs >= 2 positive widths")
        if not 1 <= self.attach_after_layer < len(self.layer_channels):
            raise ConfigurationError(
                "backbone.attach_after_layer", f"must be in [1, {len(self.layer_channels)})"
            )
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("backbone.dropout", "must be in [0, 1)")
        if self.kind == "graph-transformer":
            if len(set(self.layer_channels)) != 1:
                raise ConfigurationError("backbone.layer_channels", "graph-transformer needs a constant width")
            if self.layer_channels[0] % self.heads:
                raise ConfigurationError("backbone.heads", "must divide the channel width")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigurationError("backbone.head_kind", f"must be one of {HEAD_KINDS}")
        return self


def as_batch(x, dtype=torch.float32):
    """
    Coerce a SkeletonSequence, list of sequences, array or tensor into a
    B x T x J x 3 tensor
    """
    if isinstance(x, SkeletonSequence):
        x = x.frames[None]
    elif isinstance(x, (list, tuple)) and x and isinstance(x[0], SkeletonSequence):
        x = np.stack([seq.frames for seq in x])
    x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x, dtype=dtype)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    return x


class InputNorm(nn.Module):
    """
    Batch normalization of the raw coordinates, one channel per
    (joint, axis) pair with statistics over batch and frames
    """

    def __init__(self, joints, channels=3):
        super().__init__()
        self.norm = nn.BatchNorm1d(joints * channels)

    def forward(self, x):
        B, T, J, C = x.shape
        x = x.permute(0, 2, 3, 1).reshape(B, J * C, T)
        x = self.norm(x)
        return x.reshape(B, J, C, T).permute(0, 3, 1, 2)


class GCNBlock(nn.Module):
    """
    Spatial graph aggregation, then temporal convolution along frames,
    batch normalization and ReLU
    """

    def __init__(self, in_channels, out_channels, adjacency, dropout=0.0, kernel_size=3):
        super().__init__()
        self.register_buffer("adjacency", torch.as_tensor(adjacency, dtype=torch.float32))
        self.spatial = nn.Linear(in_channels, out_channels)
        self.temporal = nn.Conv1d(out_channels, out_channels, kernel_size, padding=kernel_size // 2)
        self.norm = nn.BatchNorm1d(out_channels)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        # x: B x T x J x C
        x = torch.einsum("vw,btwc->btvc", self.adjacency, x)
        x = self.spatial(x)
        B, T, J, C = x.shape
        x = x.permute(0, 2, 3, 1).reshape(B * J, C, T)
        x = self.norm(self.temporal(x))
        x = x.reshape(B, J, C, T).permute(0, 3, 1, 2)
        return self.dropout(torch.relu(x))


class GraphTransformerBlock(nn.Module):
    """Per-frame attention over joints, then per-joint attention over frames"""

    def __init__(self, in_channels, out_channels, heads=1, dropout=0.0):
        super().__init__()
        self.project = (
            nn.Linear(in_channels, out_channels) if in_channels != out_channels else None
        )
        self.spatial = nn.MultiheadAttention(out_channels, heads, dropout=dropout, batch_first=True)
        self.temporal = nn.MultiheadAttention(out_channels, heads, dropout=dropout, batch_first=True)
        self.spatial_norm = nn.LayerNorm(out_channels)
        self.temporal_norm = nn.LayerNorm(out_channels)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        if self.project is not None:
            x = torch.relu(self.project(x))
        B, T, J, C = x.shape
        tokens = x.reshape(B * T, J, C)
        attended, _ = self.spatial(tokens, tokens, tokens, need_weights=False)
        x = self.spatial_norm(tokens + self.dropout(attended)).reshape(B, T, J, C)
        tokens = x.transpose(1, 2).reshape(B * J, T, C)
        attended, _ = self.temporal(tokens, tokens, tokens, need_weights=False)
        x = self.temporal_norm(tokens + self.dropout(attended))
        return x.reshape(B, J, T, C).transpose(1, 2)


RELU_GAIN = 6.0 ** 0.5


def init_fan_in_uniform(module, generator=None, gain=1.0):
    """
    Weights from U(-gain/sqrt(fan_in), gain/sqrt(fan_in)), biases zero,
    layer and batch norms identity. `RELU_GAIN` gives He uniform
    initialization for layers followed by a ReLU.
    """
    with torch.no_grad():
        for mod in module.modules():
            if isinstance(mod, (nn.LayerNorm, nn.BatchNorm1d)):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
            elif isinstance(mod, nn.MultiheadAttention):
                bound = 1.0 / mod.embed_dim ** 0.5
                mod.in_proj_weight.uniform_(-bound, bound, generator=generator)
                mod.in_proj_bias.zero_()
            elif isinstance(mod, (nn.Linear, nn.Conv1d)):
                fan_in = mod.weight[0].numel()
                bound = gain / fan_in ** 0.5
                mod.weight.uniform_(-bound, bound, generator=generator)
                if mod.bias is not None:
                    mod.bias.zero_()


def build_layers(config, adjacency):
    widths = [3] + list(config.layer_channels)
    layers = []
    for c_in, c_out in zip(widths[:-1], widths[1:]):
        if config.kind == "gcn":
            layers.append(GCNBlock(c_in, c_out, adjacency, config.dropout))
        else:
            layers.append(GraphTransformerBlock(c_in, c_out, config.heads, config.dropout))
    return layers


class BackboneModel(nn.Module):
    """
    Backbone with input embedding f_e, feature extractor f_g and
    classifier head f_c
    """

    def __init__(self, config, topology, frames, num_classes, seed=0):
        """
        Parameters
        ----------
        config : BackboneConfig
        topology : SkeletonTopology
        frames : int
            T, frames per input sequence
        num_classes : int
            initial classifier rows
        seed : int
            drives the He uniform initialization
        """
        super().__init__()
        self.config = config.validate()
        self.frames = frames
        self.joints = topology.joint_count
        generator = torch.Generator().manual_seed(derive_seed(seed, "backbone"))
        layers = build_layers(config, topology.normalized_adjacency())
        # input normalization sits inside f_e so the codebook's query copy carries it
        self.f_e = nn.Sequential(InputNorm(self.joints), *layers[:config.attach_after_layer])
        self.f_g = nn.Sequential(*layers[config.attach_after_layer:])
        init_fan_in_uniform(self, generator, gain=RELU_GAIN)
        self.head = build_head(config.head_kind, config.feature_dim, num_classes, generator)

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def check_input(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.frames, self.joints, 3):
            raise ContractError(
                f"expected input B x {self.frames} x {self.joints} x 3, got {tuple(x.shape)}"
            )

    def embed(self, x):
        """X_e = f_e(X), shape B x T x J x C_e"""
        x = as_batch(x, dtype=self.head.weight.dtype)
        self.check_input(x)
        return self.f_e(x)

    def features(self, x_e):
        """f_g followed by a global mean pool over (T, J)"""
        return self.f_g(x_e).mean(dim=(1, 2))

    def extract_and_classify(self, x_e, expected_classes=None):
        """Logits over the seen classes for a (prompted) embedding"""
        if not torch.all(torch.isfinite(x_e)):
            raise ContractError("embedding contains non-finite values")
        if x_e.dim() != 4 or x_e.shape[-1] != self.embed_dim:
            raise ContractError(f"expected B x T x J x {self.embed_dim} embedding, got {tuple(x_e.shape)}")
        self.head.check_rows(expected_classes)
        return self.head(self.features(x_e))

    def forward(self, x):
        return self.extract_and_classify(self.embed(x))

    def extractor_parameters(self):
        return list(self.f_e.parameters()) + list(self.f_g.parameters())

    def freeze_extractor(self):
        """Freeze f_e and f_g and put them in eval mode"""
        for param in self.extractor_parameters():
            param.requires_grad_(False)
        self.f_e.eval()
        self.f_g.eval()

    def train(self, mode=True):
        super().train(mode)
        if self.frozen:
            self.f_e.eval()
            self.f_g.eval()
        return self

    @property
    def frozen(self):
        params = self.extractor_parameters()
        return bool(params) and not any(p.requires_grad for p in params)


def apply_freeze_policy(model, session_index):
    """
    Freeze policy of user sessions t >= 1: f_e and f_g frozen; a
    'linear-frozen-old' head zeroes the gradients of its pre-existing rows;
    a cosine head keeps its scale eta fixed.
    """
    if session_index < 1:
        raise ContractError(f"freeze policy applies to sessions t >= 1, got {session_index}")
    model.freeze_extractor()
    if model.head.kind == "linear-frozen-old":
        model.head.freeze_old_rows()
    if model.head.kind == "cosine":
        model.head.freeze_scale()
    LOGGER.debug("Applied freeze policy for session %d (%s head)", session_index, model.head.kind)
