# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
trainer.py

Few-shot class-incremental training with prompt offsets.

Base session (t = 0):
    1. pretrain f_c o f_g o f_e on the base data with cross-entropy
    2. copy f_e, f_g into the frozen query backbone, draw pool and keys
       from U(0, 1), and train backbone, prompts, keys and query adaptor
       jointly with cross-entropy plus the clustering loss

User session (t >= 1), data of this session only:
    1. expand the prompt pool (pool_mode 'expand')
    2. expand the classifier by N mean-initialized rows
    3. freeze f_e, f_g (and old classifier rows or eta, per head)
    4. per batch: query -> ordered selection -> gather -> attach -> predict
       -> losses -> update of f_QA, keys, selected prompts and f_c

The baselines run the same schedule without a codebook: 'ft' tunes the
whole model in user sessions, 'fe' only the classifier and 'fe-frozen'
only the new classifier rows.
"""

import logging
import time
from pathlib import Path

import torch
from torch.nn import functional as F
from tqdm import tqdm

from prompt_offset.data.skeleton import stack_frames
from prompt_offset.exceptions import ContractError, ProtocolError, TrainingDivergedError
from prompt_offset.metrics.accuracy import (
    SessionReport,
    compute_accuracies,
    confusion_matrix,
    harmonic_mean,
    task_accuracies,
)
from prompt_offset.metrics.diagnostics import write_grid_csv
from prompt_offset.metrics.forgetting import bwf
from prompt_offset.models.attachment import PromptAttachment, attach
from prompt_offset.models.backbone import BackboneModel, apply_freeze_policy
from prompt_offset.models.classifier import expand_classifier
from prompt_offset.models.codebook import (
    PromptCodebook,
    clustering_loss,
    expand_pool,
    gather_prompts,
    ordered_select,
    query,
)
from prompt_offset.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from prompt_offset.training.observers import notify_all
from prompt_offset.training.state import PoetState
from prompt_offset.utils import derive_seed, set_deterministic, torch_generator

LOGGER = logging.getLogger(__name__)

EVAL_BATCH = 256


def _rows(classes):
    return {class_id: row for row, class_id in enumerate(classes)}


def _tensors(sequences, classes):
    rows = _rows(classes)
    x = torch.as_tensor(stack_frames(sequences))
    y = torch.tensor([rows[seq.class_id] for seq in sequences], dtype=torch.long)
    return x, y


def _batches(count, batch_size, generator):
    perm = torch.randperm(count, generator=generator)
    for start in range(0, count, batch_size):
        yield perm[start:start + batch_size]


def check_permutation(selection, pool_size):
    """With M = T every ordered selection must be a permutation of the pool"""
    order = selection.order
    if order.shape[1] != pool_size:
        return
    expected = torch.arange(pool_size, device=order.device).expand_as(order)
    if not torch.equal(torch.sort(order, dim=1).values, expected):
        raise ContractError("selection with M = T is not a permutation of the pool")


def forward_prompted(state, x, straight_through=True, stages=None):
    """
    Logits over the seen classes; with a codebook the embedding is offset by
    the ordered prompts of each input.

    Returns
    -------
    logits, selection : Tensor B x classes, OrderedSelection/None
    """
    stages = stages if stages is not None else []
    train_cfg = state.config.train
    x_e = state.backbone.embed(x)
    selection = None
    if state.codebook is not None:
        q = query(state.codebook, x)
        stages.append("query")
        selection = ordered_select(state.codebook, q, state.prompt_count, sort=train_cfg.sort)
        stages.append("sort")
        prompts = gather_prompts(state.codebook, selection, straight_through=straight_through)
        stages.append("gather")
        x_e = attach(x_e, prompts, train_cfg.attach_mode, state.attachment)
        stages.append("attach")
    else:
        stages.append("embed")
    logits = state.backbone.extract_and_classify(x_e)
    stages.append("predict")
    return logits, selection


def _optimizer(groups):
    groups = [
        {"params": [p for p in params if p.requires_grad], "lr": lr}
        for params, lr in groups
    ]
    groups = [g for g in groups if g["params"]]
    if not groups:
        return None
    return torch.optim.SGD(groups, lr=groups[0]["lr"])


def _fit(state, x, y, epochs, batch_size, optimizer, session, phase, observers, statistics, generator):
    """Run `epochs` of mini-batch SGD; returns the number of steps taken"""
    train_cfg = state.config.train
    lam = train_cfg.lam if train_cfg.clustering else 0.0
    straight_through = train_cfg.coupled
    step = 0
    if optimizer is None or epochs == 0:
        LOGGER.info("Session %d %s: nothing to train", session, phase)
        return step

    for epoch in tqdm(range(epochs), desc=f"session {session} {phase}", disable=None, leave=False):
        state.set_mode(True)
        epoch_loss, epoch_batches = 0.0, 0
        for index in _batches(len(y), batch_size, generator):
            stages = []
            optimizer.zero_grad()
            logits, selection = forward_prompted(state, x[index], straight_through, stages)
            if selection is not None and state.codebook.reserved == 0:
                check_permutation(selection, state.codebook.pool_size)
            ce_loss = F.cross_entropy(logits, y[index])
            if selection is not None:
                cl_loss = clustering_loss(selection.gamma, selection, lam)
            else:
                cl_loss = torch.zeros((), dtype=ce_loss.dtype)
            loss = ce_loss + cl_loss
            stages.append("losses")
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step, loss.item())
            loss.backward()
            optimizer.step()
            stages.append("update")

            losses = {"ce": ce_loss.item(), "clustering": cl_loss.item(), "total": loss.item()}
            LOGGER.debug("Session %d %s step %d: %s", session, phase, step, losses)
            notify_all(observers, statistics, {
                "kind": "step",
                "session": session,
                "phase": phase,
                "epoch": epoch,
                "step": step,
                "stages": stages,
                "losses": losses,
                "sample_index": index.tolist(),
                "order": selection.as_lists() if selection is not None else None,
            })
            epoch_loss += losses["total"]
            epoch_batches += 1
            step += 1
        LOGGER.info(
            "Session %d %s epoch %d/%d: mean loss %.4f",
            session, phase, epoch + 1, epochs, epoch_loss / max(epoch_batches, 1),
        )
    return step


def _check_session_data(protocol, session_data, t):
    if not session_data:
        raise ProtocolError(f"session {t} has no training data")
    classes = set(protocol.session_classes(t))
    labels = {seq.class_id for seq in session_data}
    if t > 0:
        overlap = labels & set(protocol.seen_classes(t - 1))
        if overlap:
            raise ProtocolError(f"session {t} data contains already seen classes {sorted(overlap)}")
    stray = labels - classes
    if stray:
        raise ProtocolError(f"session {t} data contains classes {sorted(stray)} outside the session")


def train_base(config, protocol, base_data, topology, observers=(), statistics=None):
    """
    Train the base session

    Parameters
    ----------
    config : ExperimentConfig
    protocol : ContinualProtocol
    base_data : List[SkeletonSequence]
        all training sequences of the base classes
    topology : SkeletonTopology
    observers : List[Observer]
    statistics : dict (optional)
        modified in place by the observers

    Returns
    -------
    state, checkpoint : PoetState, Checkpoint
    """
    statistics = {} if statistics is None else statistics
    train_cfg = config.train
    seed = train_cfg.seed
    _check_session_data(protocol, base_data, 0)
    set_deterministic(seed)
    torch.manual_seed(derive_seed(seed, "session", 0))

    classes = protocol.session_classes(0)
    backbone = BackboneModel(config.backbone, topology, config.dataset.frames, len(classes), seed)
    state = PoetState(config=config, protocol=protocol, topology=topology, backbone=backbone)
    x, y = _tensors(base_data, classes)
    generator = torch_generator(seed, "batches", 0)
    notify_all(observers, statistics, {"kind": "session_start", "session": 0, "stages": ["pretrain"]})

    optimizer = _optimizer([(backbone.parameters(), train_cfg.pretrain_lr)])
    _fit(state, x, y, train_cfg.pretrain_epochs, train_cfg.base_batch, optimizer,
         0, "pretrain", observers, statistics, generator)

    if train_cfg.uses_prompts:
        state.codebook = PromptCodebook(backbone, train_cfg.initial_pool_size(state.frames), seed)
        state.attachment = PromptAttachment(
            train_cfg.attach_mode, state.frames, backbone.embed_dim,
            prompt_count=state.prompt_count, generator=torch_generator(seed, "attachment"),
        )
        main = (list(backbone.parameters()) + list(state.attachment.parameters())
                + list(state.codebook.pool_blocks) + [state.codebook.keys])
        optimizer = _optimizer([
            (main, train_cfg.base_lr),
            (state.codebook.adaptor.parameters(), train_cfg.base_lr),
        ])
        phase = "prompt"
    else:
        optimizer = _optimizer([(backbone.parameters(), train_cfg.base_lr)])
        phase = "base"
    _fit(state, x, y, train_cfg.base_epochs, train_cfg.base_batch, optimizer,
         0, phase, observers, statistics, generator)

    state.session = 0
    notify_all(observers, statistics, {"kind": "session_end", "session": 0})
    LOGGER.info("Base session trained on %d sequences of %d classes", len(base_data), len(classes))
    return state, Checkpoint.from_state(state)


def _session_parameters(state):
    """Parameter groups updated in a user session, per method"""
    train_cfg = state.config.train
    main = list(state.backbone.head.parameters())
    if train_cfg.method == "ft":
        main += state.backbone.extractor_parameters()
    if state.codebook is not None:
        main += list(state.codebook.pool_blocks) + [state.codebook.keys]
        return [(main, train_cfg.session_lr), (state.codebook.adaptor.parameters(), train_cfg.adaptor_lr)]
    return [(main, train_cfg.session_lr)]


def train_session(config, state, session_data, t, observers=(), statistics=None):
    """
    Train user session t on its few-shot data only

    Parameters
    ----------
    config : ExperimentConfig
    state : PoetState
        state after session t - 1, updated in place
    session_data : List[SkeletonSequence]
        N * F sequences of the session's classes
    t : int
        session index, >= 1

    Returns
    -------
    state, checkpoint : PoetState, Checkpoint
    """
    statistics = {} if statistics is None else statistics
    if t < 1 or t != state.session + 1:
        raise ContractError(f"session {t} cannot follow session {state.session}")
    protocol = state.protocol
    _check_session_data(protocol, session_data, t)
    train_cfg = config.train
    seed = train_cfg.seed
    torch.manual_seed(derive_seed(seed, "session", t))

    session_spec = protocol.sessions[t - 1]
    stages = []
    if state.codebook is not None and train_cfg.pool_mode == "expand":
        expand_pool(state.codebook, train_cfg.expand_prompts, generator=torch_generator(seed, "expand", t))
        stages.append("expand_pool")
    state.backbone.head = expand_classifier(state.backbone.head, session_spec.ways)
    stages.append("expand_classifier")

    if train_cfg.method != "ft":
        apply_freeze_policy(state.backbone, t)
        if train_cfg.method == "fe-frozen":
            state.backbone.head.freeze_old_rows()
    if state.attachment is not None:
        state.attachment.requires_grad_(False)
    if state.codebook is not None:
        state.codebook.adaptor.requires_grad_(train_cfg.qa_update)
    stages.append("freeze")
    notify_all(observers, statistics, {"kind": "session_start", "session": t, "stages": stages})

    x, y = _tensors(session_data, protocol.seen_classes(t))
    optimizer = _optimizer(_session_parameters(state))
    batch_size = train_cfg.batch_for_session(session_spec.ways, session_spec.shots)
    _fit(state, x, y, train_cfg.session_epochs, batch_size,
         optimizer, t, "session", observers, statistics, torch_generator(seed, "batches", t))

    state.session = t
    notify_all(observers, statistics, {"kind": "session_end", "session": t})
    LOGGER.info("Session %d trained on %d sequences of %d classes", t, len(session_data), session_spec.ways)
    return state, Checkpoint.from_state(state)


def predict(state, x, batch_size=EVAL_BATCH):
    """Predicted row indices for a B x T x J x 3 tensor"""
    state.set_mode(False)
    predictions = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            logits, _ = forward_prompted(state, x[start:start + batch_size])
            predictions.append(logits.argmax(dim=1))
    return torch.cat(predictions) if predictions else torch.zeros(0, dtype=torch.long)


def evaluate(state, test_sequences, t=None):
    """
    Evaluate on the test sequences of all classes seen up to session t

    Returns
    -------
    report : SessionReport
        with avg/old/new/a_hm, per-class and per-session accuracies and the
        confusion matrix; bwf is filled in by `run_protocol`
    """
    t = state.session if t is None else t
    seen = state.seen_classes(t)
    wanted = set(seen)
    test = [seq for seq in test_sequences if seq.class_id in wanted]
    if not test:
        raise ProtocolError(f"no test sequences for the classes seen in session {t}")
    x, _ = _tensors(test, seen)
    rows = predict(state, x)
    predictions = [seen[r] for r in rows.tolist()]
    labels = [seq.class_id for seq in test]

    class_sessions = state.protocol.class_sessions(t)
    avg, old, new, per_class = compute_accuracies(predictions, labels, class_sessions, t)
    return SessionReport(
        session=t,
        avg=avg,
        old=old,
        new=new,
        a_hm=harmonic_mean(old, new) if old is not None else None,
        per_class=per_class,
        task_accuracy=task_accuracies(predictions, labels, class_sessions),
        seen_classes=seen,
        confusion=confusion_matrix(predictions, labels, seen),
    )


def latest_checkpoint(run_dir):
    """Path of the checkpoint of the last completed session, or None"""
    paths = sorted(Path(run_dir).glob("session-*.ckpt"), key=lambda p: int(p.stem.split("-")[1]))
    return paths[-1] if paths else None


def _finish_session(state, dataset, started, run_dir):
    t = state.session
    report = evaluate(state, dataset.test, t)
    state.history.record_session(t, report.task_accuracy)
    if t >= 1:
        report.bwf = bwf(state.history, t + 1)
    report.wall_seconds = time.perf_counter() - started
    state.reports.append(report)
    LOGGER.report(
        "Session %d: avg %.1f old %s new %.1f a_hm %s bwf %s",
        t, report.avg,
        "-" if report.old is None else f"{report.old:.1f}",
        report.new,
        "-" if report.a_hm is None else f"{report.a_hm:.1f}",
        "-" if report.bwf is None else f"{report.bwf:.1f}",
    )
    if run_dir is not None:
        write_grid_csv(report.confusion, Path(run_dir) / f"confusion-session-{t}.csv", "true", "pred")
        if state.config.output.checkpoints:
            save_checkpoint(state, Path(run_dir) / f"session-{t}.ckpt")
    return report


def run_protocol(config, protocol, subsets, dataset, observers=(), run_dir=None, resume=False, statistics=None):
    """
    Train the base session and every user session in order, evaluating on
    the cumulative test set after each

    Parameters
    ----------
    config : ExperimentConfig
    protocol : ContinualProtocol
    subsets : List[List[SkeletonSequence]]
        training sequences per session, as returned by `make_protocol`
    dataset : SplitDataset
        supplies the test split and the topology
    observers : List[Observer]
    run_dir : str/Path (optional)
        where checkpoints and confusion matrices are written
    resume : True/False
        continue after the last checkpoint found in `run_dir`

    Returns
    -------
    reports : List[SessionReport]
        one per session, base session first
    """
    config.validate()
    statistics = {} if statistics is None else statistics
    for obs in observers:
        obs.start(resume)

    state = None
    if resume and run_dir is not None:
        path = latest_checkpoint(run_dir)
        if path is not None:
            state = load_checkpoint(path)
            LOGGER.report("Resuming after session %d from %s", state.session, path)

    if state is None:
        started = time.perf_counter()
        state, _ = train_base(config, protocol, subsets[0], dataset.topology, observers, statistics)
        _finish_session(state, dataset, started, run_dir)

    for t in range(state.session + 1, protocol.num_sessions):
        started = time.perf_counter()
        state, _ = train_session(config, state, subsets[t], t, observers, statistics)
        _finish_session(state, dataset, started, run_dir)
    return state.reports
