# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
attachment.py

Prompt attachment operators f_p(X_e, P_T). Prompt offset tuning adds the
ordered prompts to the embedding; the other modes exist for comparison.
"""

import logging

import torch
from torch import nn

from prompt_offset.exceptions import ContractError
from prompt_offset.models.backbone import init_fan_in_uniform

LOGGER = logging.getLogger(__name__)

ATTACH_MODES = ("add", "concat-temporal", "concat-feature", "cross-attention", "add-single")


class PromptAttachment(nn.Module):
    """
    Attach prompts P_T (B x T' x J x C_e) to an embedding X_e (B x T x J x C_e).

    'add'              X_e + P_T, requires T' = T
    'add-single'       X_e + P_T[:, :1], one prompt frame broadcast over T
    'concat-temporal'  concatenate along frames, learned linear remap T + T' -> T
    'concat-feature'   concatenate along channels, learned linear remap 2 C_e -> C_e
    'cross-attention'  per joint, X_e frames attend to P_T frames (single head),
                       output added residually
    """

    def __init__(self, mode, frames, embed_dim, prompt_count=None, generator=None):
        super().__init__()
        if mode not in ATTACH_MODES:
            raise ContractError(f"unknown attachment mode {mode!r}, choose from {ATTACH_MODES}")
        self.mode = mode
        self.frames = frames
        self.embed_dim = embed_dim
        self.prompt_count = prompt_count or (1 if mode == "add-single" else frames)
        self.remap = None
        if mode == "concat-temporal":
            self.remap = nn.Linear(frames + self.prompt_count, frames)
        elif mode == "concat-feature":
            self.remap = nn.Linear(2 * embed_dim, embed_dim)
        elif mode == "cross-attention":
            self.remap = nn.MultiheadAttention(embed_dim, 1, batch_first=True)
        if self.remap is not None:
            init_fan_in_uniform(self.remap, generator)

    def check_shapes(self, x_e, prompts):
        if x_e.dim() != 4 or prompts.dim() != 4:
            raise ContractError("embedding and prompts must both be B x T x J x C_e")
        if x_e.shape[0] != prompts.shape[0] or x_e.shape[2:] != prompts.shape[2:]:
            raise ContractError(
                f"prompts {tuple(prompts.shape)} incompatible with embedding {tuple(x_e.shape)}"
            )
        if self.mode == "add-single":
            if prompts.shape[1] < 1:
                raise ContractError("add-single needs at least one prompt frame")
        elif self.mode in ("add", "concat-feature") and prompts.shape[1] != x_e.shape[1]:
            raise ContractError(
                f"mode {self.mode!r} needs {x_e.shape[1]} prompt frames, got {prompts.shape[1]}"
            )
        elif self.mode == "concat-temporal" and prompts.shape[1] != self.prompt_count:
            raise ContractError(
                f"concat-temporal remap expects {self.prompt_count} prompt frames, got {prompts.shape[1]}"
            )

    def forward(self, x_e, prompts):
        self.check_shapes(x_e, prompts)
        if self.mode == "add":
            return x_e + prompts
        if self.mode == "add-single":
            return x_e + prompts[:, :1]
        if self.mode == "concat-feature":
            return self.remap(torch.cat([x_e, prompts], dim=-1))
        if self.mode == "concat-temporal":
            joined = torch.cat([x_e, prompts], dim=1)  # B x (T + T') x J x C
            return self.remap(joined.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        B, T, J, C = x_e.shape
        queries = x_e.transpose(1, 2).reshape(B * J, T, C)
        memory = prompts.transpose(1, 2).reshape(B * J, prompts.shape[1], C)
        attended, _ = self.remap(queries, memory, memory, need_weights=False)
        return x_e + attended.reshape(B, J, T, C).transpose(1, 2)


def attach(x_e, prompts, mode="add", module=None):
    """
    Functional form of `PromptAttachment`. The parameter-free modes ('add',
    'add-single') need no module; the learned modes require one.
    """
    if module is None:
        if mode not in ("add", "add-single"):
            raise ContractError(f"mode {mode!r} has learned parameters, pass its PromptAttachment")
        module = PromptAttachment(mode, x_e.shape[1], x_e.shape[-1], prompt_count=prompts.shape[1])
    elif module.mode != mode:
        raise ContractError(f"attachment module is {module.mode!r}, requested {mode!r}")
    return module(x_e, prompts)
