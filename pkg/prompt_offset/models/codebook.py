# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
codebook.py

The prompt codebook: a pool of M prompts (each J x C_e) paired one-to-one
with M keys of length C_e, and the query function that selects prompts for
an input.

    q   = f_QA(pool(f_g'(f_e'(X))))              query, length C_e
    g_i = cos(q, K_i)                            similarity to every key
    s   = argsort(g, descending)[:T]             ordered key index sequence
    P_T = [P[s_1], ..., P[s_T]]                  prompts read in that order

Selecting indices is not differentiable. `gather_prompts` multiplies every
gathered prompt by (g - stopgrad(g) + 1), which equals 1 in value, so the
cross-entropy gradient also reaches the keys and the query adaptor.

usage:

>>> codebook = PromptCodebook(backbone, pool_size=16, seed=0)
>>> q = query(codebook, batch)
>>> selection = ordered_select(codebook, q, T=16)
>>> prompts = gather_prompts(codebook, selection)
"""

import copy
import logging
from dataclasses import dataclass
from typing import List

import torch
from torch import nn

from prompt_offset.exceptions import ContractError, NumericDegeneracyError
from prompt_offset.models.backbone import as_batch, init_fan_in_uniform
from prompt_offset.utils import derive_seed

LOGGER = logging.getLogger(__name__)


@dataclass
class OrderedSelection:
    """
    Ordered prompt indices per sample.

    order : LongTensor, B x T, distinct 0-based pool indices, decreasing similarity
    gamma : Tensor, B x M, cosine similarity of the query to every key
    """

    order: torch.Tensor
    gamma: torch.Tensor

    @property
    def selected_gamma(self):
        """Similarities of the selected keys, B x T, in selection order"""
        return self.gamma.gather(1, self.order)

    def as_lists(self) -> List[List[int]]:
        return self.order.detach().cpu().tolist()


class PromptCodebook(nn.Module):
    """
    Prompt pool, keys and query function. The query backbone f_e', f_g' is a
    frozen copy of the backbone it is built from; only the query adaptor
    f_QA is trainable. The pool is stored as a list of blocks, one per
    expansion, so previous blocks can be frozen independently.
    """

    def __init__(self, backbone, pool_size, seed=0):
        """
        Parameters
        ----------
        backbone : BackboneModel
            source of the frozen query layers f_e', f_g'
        pool_size : int
            M, number of prompts and keys
        seed : int
            drives U(0, 1) prompt/key initialization and the adaptor init
        """
        super().__init__()
        if pool_size < 1:
            raise ContractError(f"pool size must be >= 1, got {pool_size}")
        self.joints = backbone.joints
        self.embed_dim = backbone.embed_dim
        self.seed = seed
        self.query_e = copy.deepcopy(backbone.f_e)
        self.query_g = copy.deepcopy(backbone.f_g)
        for param in list(self.query_e.parameters()) + list(self.query_g.parameters()):
            param.requires_grad_(False)
        self.adaptor = nn.Linear(backbone.config.feature_dim, self.embed_dim)
        generator = torch.Generator().manual_seed(derive_seed(seed, "codebook"))
        init_fan_in_uniform(self.adaptor, generator)
        self.pool_blocks = nn.ParameterList(
            [nn.Parameter(torch.rand(pool_size, self.joints, self.embed_dim, generator=generator))]
        )
        self.keys = nn.Parameter(torch.rand(pool_size, self.embed_dim, generator=generator))
        self.reserved = 0

    def train(self, mode=True):
        super().train(mode)
        self.query_e.eval()
        self.query_g.eval()
        return self

    @property
    def pool_size(self):
        return self.keys.shape[0]

    @property
    def pool(self):
        """All prompts, M x J x C_e"""
        return torch.cat(list(self.pool_blocks), dim=0)

    @property
    def frozen_mask(self):
        """Boolean mask over pool entries, True where the prompt is frozen"""
        return torch.cat([
            torch.full((block.shape[0],), not block.requires_grad, dtype=torch.bool)
            for block in self.pool_blocks
        ])

    def query_parameters(self):
        return list(self.query_e.parameters()) + list(self.query_g.parameters())

    def query(self, x):
        """q = f_QA(pool(f_g'(f_e'(X)))), B x C_e"""
        if self.adaptor.out_features != self.embed_dim:
            raise ContractError(
                f"query adaptor outputs {self.adaptor.out_features} features, prompts need {self.embed_dim}"
            )
        x = as_batch(x, dtype=self.keys.dtype)
        if x.dim() != 4 or x.shape[2] != self.joints or x.shape[3] != 3:
            raise ContractError(f"expected B x T x {self.joints} x 3 input, got {tuple(x.shape)}")
        with torch.no_grad():
            hidden = self.query_g(self.query_e(x)).mean(dim=(1, 2))
        return self.adaptor(hidden)

    def similarities(self, q):
        """Cosine similarity gamma of each query to every key, B x M"""
        q_norm = q.norm(dim=-1)
        if torch.any(q_norm == 0):
            raise NumericDegeneracyError("zero-norm query has no cosine similarity")
        k_norm = self.keys.norm(dim=-1)
        if torch.any(k_norm == 0):
            bad = torch.nonzero(k_norm == 0).flatten().tolist()
            raise NumericDegeneracyError(f"zero-norm keys {bad} have no cosine similarity")
        return (q / q_norm[:, None]) @ (self.keys / k_norm[:, None]).T

    def select(self, q, prompt_count, sort=True):
        """See `ordered_select`"""
        M = self.pool_size
        if not 1 <= prompt_count <= M:
            raise ContractError(f"need 1 <= T <= M, got T={prompt_count}, M={M}")
        reserved = self.reserved
        if reserved > prompt_count:
            raise ContractError(f"{reserved} reserved prompts do not fit in T={prompt_count}")
        gamma = self.similarities(q)
        ranked_gamma = gamma.detach()

        head_count = prompt_count - reserved
        old_order = stable_top(ranked_gamma[:, :M - reserved], head_count, sort)
        if reserved:
            new_order = stable_top(ranked_gamma[:, M - reserved:], reserved, sort) + (M - reserved)
            order = torch.cat([old_order, new_order], dim=1)
        else:
            order = old_order
        return OrderedSelection(order=order, gamma=gamma)

    def gather(self, selection, straight_through=True):
        """See `gather_prompts`"""
        order = selection.order
        if order.numel() and (order.min() < 0 or order.max() >= self.pool_size):
            raise ContractError(f"selection indexes outside the pool of {self.pool_size}")
        prompts = self.pool[order]
        if not straight_through:
            return prompts
        chosen = selection.selected_gamma
        unit = chosen - chosen.detach() + 1.0
        return prompts * unit[..., None, None]

    def expand(self, new_prompts, generator=None):
        """See `expand_pool`"""
        if new_prompts < 1:
            raise ContractError(f"pool expansion needs R >= 1, got {new_prompts}")
        for block in self.pool_blocks:
            block.requires_grad_(False)
        device, dtype = self.keys.device, self.keys.dtype
        block = torch.rand(new_prompts, self.joints, self.embed_dim, generator=generator)
        self.pool_blocks.append(nn.Parameter(block.to(device=device, dtype=dtype)))
        with torch.no_grad():
            mean_key = self.keys.mean(dim=0, keepdim=True).expand(new_prompts, -1)
            self.keys = nn.Parameter(torch.cat([self.keys, mean_key], dim=0))
        self.reserved = new_prompts
        LOGGER.info("Expanded prompt pool to %d prompts (%d new)", self.pool_size, new_prompts)
        return self


def stable_top(gamma, count, sort=True):
    """
    Indices of the `count` largest entries per row, in descending order with
    ties broken by ascending index; with `sort=False` the same set in
    ascending index order
    """
    order = torch.sort(gamma, dim=1, descending=True, stable=True).indices[:, :count]
    if not sort:
        order = torch.sort(order, dim=1).values
    return order


def query(codebook, x):
    """
    Query vector of an input

    Parameters
    ----------
    codebook : PromptCodebook
    x : SkeletonSequence/array/tensor
        one sequence or a batch B x T x J x 3

    Returns
    -------
    q : Tensor, B x C_e
    """
    return codebook.query(x)


def ordered_select(codebook, q, T, sort=True):
    """
    Select T prompts ordered by decreasing cosine similarity to the query

    Parameters
    ----------
    codebook : PromptCodebook
    q : Tensor, B x C_e
    T : int
        number of prompts to select, 1 <= T <= M
    sort : True/False
        when False the selected set is returned in ascending index order,
        i.e. plain top-T selection

    Returns
    -------
    selection : OrderedSelection

    Raises
    ------
    NumericDegeneracyError
        if the query or any key has zero norm
    """
    return codebook.select(q, T, sort=sort)


def gather_prompts(codebook, selection, straight_through=True):
    """
    Read the pool in selection order, P_T of shape B x T x J x C_e. With
    `straight_through` the values are unchanged while gradients reach the
    similarities (keys and query adaptor).
    """
    return codebook.gather(selection, straight_through=straight_through)


def clustering_loss(gamma, selection, lam):
    """
    Clustering loss -lam * sum of the selected similarities, averaged over
    the batch. `gamma` is B x M; `selection` an OrderedSelection or a B x T
    index tensor.
    """
    if lam < 0:
        raise ContractError(f"clustering coefficient must be >= 0, got {lam}")
    order = selection.order if isinstance(selection, OrderedSelection) else selection
    if lam == 0:
        return gamma.sum() * 0.0
    return -lam * gamma.gather(1, order).sum(dim=1).mean()


def expand_pool(codebook, R, key_init="mean", generator=None):
    """
    Append R prompts drawn from U(0, 1) and R keys set to the mean of the
    existing keys; freeze all previous prompts. Later selections place the
    R new indices in the last R positions.
    """
    if key_init != "mean":
        raise ContractError(f"unsupported key initialization {key_init!r}")
    if generator is None:
        generator = torch.Generator().manual_seed(
            derive_seed(codebook.seed, "expand", codebook.pool_size)
        )
    return codebook.expand(R, generator=generator)

