# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import random

import pytest
import torch
from torch import nn

from prompt_offset.data.skeleton import get_topology
from prompt_offset.exceptions import ContractError, NumericDegeneracyError
from prompt_offset.models.attachment import attach
from prompt_offset.models.backbone import BackboneConfig, BackboneModel
from prompt_offset.models.codebook import (
    OrderedSelection,
    PromptCodebook,
    clustering_loss,
    expand_pool,
    gather_prompts,
    ordered_select,
    query,
)

FRAMES = 6
JOINTS = 5


@pytest.fixture(scope="module")
def backbone():
    config = BackboneConfig(layer_channels=[4, 4, 8])
    return BackboneModel(config, get_topology("chain", joint_count=JOINTS), FRAMES, 3, seed=0)


def _oracle(gamma, T):
    return [
        sorted(range(gamma.shape[1]), key=lambda i, row=row: (-row[i], i))[:T]
        for row in gamma.tolist()
    ]


def test_select_matches_exhaustive_sort(backbone):
    codebook = PromptCodebook(backbone, 64, seed=0)
    rng = random.Random(0)
    generator = torch.Generator().manual_seed(0)
    for _ in range(1000):
        M = rng.randint(1, 64)
        T = rng.randint(1, M)
        keys = torch.randn(M, 4, generator=generator)
        if M > 1 and rng.random() < 0.5:
            # duplicate keys produce exact ties
            for _ in range(rng.randint(1, M // 2 + 1)):
                keys[rng.randrange(M)] = keys[rng.randrange(M)]
        codebook.keys = nn.Parameter(keys)
        q = torch.randn(rng.randint(1, 3), 4, generator=generator)
        selection = ordered_select(codebook, q, T)
        assert selection.as_lists() == _oracle(selection.gamma.detach(), T)

        unsorted = ordered_select(codebook, q, T, sort=False)
        assert unsorted.as_lists() == [sorted(row) for row in _oracle(unsorted.gamma.detach(), T)]


def test_select_hand_example(backbone):
    codebook = PromptCodebook(backbone, 3, seed=0)
    codebook.keys = nn.Parameter(torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]))
    selection = ordered_select(codebook, torch.tensor([[1.0, 0.0]]), 3)
    assert selection.as_lists() == [[0, 2, 1]]
    assert torch.allclose(selection.selected_gamma, torch.tensor([[1.0, 0.6, 0.0]]))


def test_select_single_prompt(backbone):
    codebook = PromptCodebook(backbone, 1, seed=0)
    assert ordered_select(codebook, torch.randn(4, 4), 1).as_lists() == [[0]] * 4


def test_full_pool_is_permutation(backbone):
    codebook = PromptCodebook(backbone, 64, seed=0)
    order = ordered_select(codebook, torch.randn(8, 4), 64).order
    assert torch.equal(torch.sort(order, dim=1).values, torch.arange(64).expand(8, 64))


@pytest.mark.parametrize("T", [0, 7])
def test_select_count_checked(backbone, T):
    with pytest.raises(ContractError):
        ordered_select(PromptCodebook(backbone, 6, seed=0), torch.randn(1, 4), T)


def test_zero_norm_rejected(backbone):
    codebook = PromptCodebook(backbone, 3, seed=0)
    with pytest.raises(NumericDegeneracyError):
        ordered_select(codebook, torch.zeros(1, 4), 2)
    with torch.no_grad():
        codebook.keys[1] = 0.0
    with pytest.raises(NumericDegeneracyError):
        ordered_select(codebook, torch.ones(1, 4), 2)


def test_query(backbone):
    codebook = PromptCodebook(backbone, 6, seed=0)
    x = torch.randn(2, FRAMES, JOINTS, 3)
    q = query(codebook, x)
    assert q.shape == (2, backbone.embed_dim)
    assert torch.equal(q, query(codebook, x))
    with torch.no_grad():
        codebook.adaptor.weight.zero_()
        codebook.adaptor.bias.zero_()
    assert torch.count_nonzero(query(codebook, x)) == 0


def test_query_adaptor_width_checked(backbone):
    codebook = PromptCodebook(backbone, 6, seed=0)
    codebook.adaptor = nn.Linear(8, 3)
    with pytest.raises(ContractError):
        query(codebook, torch.randn(1, FRAMES, JOINTS, 3))


def test_query_backbone_frozen_copy(backbone):
    codebook = PromptCodebook(backbone, 6, seed=0)
    assert all(not p.requires_grad for p in codebook.query_parameters())
    for ours, theirs in zip(codebook.query_e.parameters(), backbone.f_e.parameters()):
        assert torch.equal(ours, theirs)
        assert ours.data_ptr() != theirs.data_ptr()
    codebook.train()
    assert not codebook.query_e.training


def test_gather_order(backbone):
    codebook = PromptCodebook(backbone, 2, seed=0)
    selection = OrderedSelection(order=torch.tensor([[1, 0]]), gamma=torch.tensor([[0.2, 0.9]]))
    prompts = gather_prompts(codebook, selection, straight_through=False)
    assert torch.equal(prompts[0, 0], codebook.pool[1])
    assert torch.equal(prompts[0, 1], codebook.pool[0])
    with pytest.raises(ContractError):
        gather_prompts(codebook, OrderedSelection(order=torch.tensor([[2, 0]]), gamma=torch.zeros(1, 2)))


def test_straight_through_is_value_neutral(backbone):
    x = torch.randn(3, FRAMES, JOINTS, 3, generator=torch.Generator().manual_seed(0))
    x_e = backbone.embed(x)
    for seed in range(100):
        codebook = PromptCodebook(backbone, FRAMES, seed=seed)
        selection = ordered_select(codebook, query(codebook, x), FRAMES)
        plain = backbone.extract_and_classify(attach(x_e, gather_prompts(codebook, selection, False)))
        coupled = backbone.extract_and_classify(attach(x_e, gather_prompts(codebook, selection, True)))
        assert torch.allclose(coupled, plain, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("straight_through,moves", [(True, True), (False, False)])
def test_key_coupling(backbone, straight_through, moves):
    codebook = PromptCodebook(backbone, FRAMES, seed=0)
    head = nn.Linear(backbone.config.feature_dim, 3)
    keys_before = codebook.keys.detach().clone()
    adaptor_before = codebook.adaptor.weight.detach().clone()
    params = [codebook.keys, *codebook.pool_blocks, *codebook.adaptor.parameters(), *head.parameters()]
    optimizer = torch.optim.SGD(params, lr=0.5)
    generator = torch.Generator().manual_seed(1)
    with torch.no_grad():
        frozen_x_e = backbone.embed(torch.randn(6, FRAMES, JOINTS, 3, generator=generator))
    for step in range(10):
        x = torch.randn(6, FRAMES, JOINTS, 3, generator=generator)
        labels = torch.tensor([0, 1, 2, 0, 1, 2])
        optimizer.zero_grad()
        selection = ordered_select(codebook, query(codebook, x), FRAMES)
        prompts = gather_prompts(codebook, selection, straight_through)
        features = backbone.features(attach(frozen_x_e, prompts))
        loss = nn.functional.cross_entropy(head(features), labels)
        loss = loss + clustering_loss(selection.gamma, selection, 0.0)
        loss.backward()
        optimizer.step()
    assert (not torch.equal(codebook.keys, keys_before)) == moves
    assert (not torch.equal(codebook.adaptor.weight, adaptor_before)) == moves


def test_clustering_loss_values():
    gamma = torch.tensor([[0.5, 0.25, 0.9]])
    order = torch.tensor([[0, 1]])
    assert clustering_loss(gamma, order, 0.1).item() == pytest.approx(-0.075)
    assert clustering_loss(gamma, order, 0.0).item() == 0.0
    aligned = torch.ones(2, 4)
    assert clustering_loss(aligned, torch.tensor([[0, 1, 2], [3, 2, 1]]), 0.1).item() == pytest.approx(-0.3)
    with pytest.raises(ContractError):
        clustering_loss(gamma, order, -0.1)


def test_clustering_loss_gradcheck():
    gamma = torch.rand(2, 4, dtype=torch.float64, requires_grad=True)
    order = torch.tensor([[2, 0], [1, 3]])
    assert torch.autograd.gradcheck(
        lambda g: clustering_loss(g, order, 0.1), (gamma,), eps=1e-5, rtol=1e-4, atol=1e-6
    )


def test_expand_pool(backbone):
    codebook = PromptCodebook(backbone, 64, seed=0)
    old_pool = codebook.pool.detach().clone()
    old_keys = codebook.keys.detach().clone()
    expand_pool(codebook, 6)
    assert codebook.pool_size == 70
    assert codebook.pool.shape == (70, JOINTS, backbone.embed_dim)
    assert torch.equal(codebook.pool[:64], old_pool)
    assert torch.equal(codebook.keys[:64], old_keys)
    assert torch.allclose(codebook.keys[64:], old_keys.mean(dim=0).expand(6, -1))
    assert ((codebook.pool[64:] >= 0) & (codebook.pool[64:] < 1)).all()
    assert codebook.frozen_mask.tolist() == [True] * 64 + [False] * 6

    order = ordered_select(codebook, torch.randn(16, 4), 64).order
    assert (order[:, 58:] >= 64).all()
    assert (order[:, :58] < 64).all()
    assert len(set(order[0].tolist())) == 64


def test_expand_zero_rejected(backbone):
    with pytest.raises(ContractError):
        expand_pool(PromptCodebook(backbone, 4, seed=0), 0)
    with pytest.raises(ContractError):
        expand_pool(PromptCodebook(backbone, 4, seed=0), 2, key_init="random")
