# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
checkpoint.py

Single-file checkpoints of a run after a session. Layout:

    POET-CHECKPOINT <manifest byte length>\\n
    <UTF-8 JSON manifest>\\n
    <little-endian float32 blobs, concatenated in manifest order>

The manifest lists every tensor with its shape, byte offset (relative to
the start of the blob area) and byte length, plus the resolved config,
protocol, topology, head/pool bookkeeping, accuracy history and reports.
Saving a loaded checkpoint reproduces the file byte for byte.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np
import torch
from torch import nn

from prompt_offset.data.protocol import ContinualProtocol
from prompt_offset.data.skeleton import SkeletonTopology
from prompt_offset.exceptions import CheckpointIntegrityError
from prompt_offset.metrics.accuracy import SessionReport
from prompt_offset.metrics.forgetting import AccuracyHistory
from prompt_offset.models.attachment import PromptAttachment
from prompt_offset.models.backbone import BackboneModel
from prompt_offset.models.codebook import PromptCodebook
from prompt_offset.training.config import from_dict
from prompt_offset.training.state import PoetState

LOGGER = logging.getLogger(__name__)

MAGIC = "POET-CHECKPOINT"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Manifest plus named float32 tensors, in blob order"""

    manifest: dict
    tensors: Dict[str, torch.Tensor]

    @property
    def session(self):
        return self.manifest["session"]

    @classmethod
    def from_state(cls, state):
        tensors = {}
        frozen = []
        for prefix, module in state.modules().items():
            for name, tensor in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = tensor.detach().cpu().to(torch.float32).contiguous()
            frozen.extend(
                f"{prefix}.{name}" for name, param in module.named_parameters() if not param.requires_grad
            )

        entries, offset = [], 0
        for name, tensor in tensors.items():
            length = tensor.numel() * BLOB_DTYPE.itemsize
            entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "length": length})
            offset += length

        head = state.backbone.head
        codebook = state.codebook
        manifest = {
            "format": MAGIC,
            "format_version": FORMAT_VERSION,
            "config": state.config.resolved(),
            "seed": state.seed,
            "session": state.session,
            "protocol": state.protocol.to_dict(),
            "classes": [state.protocol.session_classes(t) for t in range(state.session + 1)],
            "topology": {
                "name": state.topology.name,
                "joint_count": state.topology.joint_count,
                "edges": [list(edge) for edge in state.topology.edges],
            },
            "dims": {
                "frames": state.frames,
                "joints": state.backbone.joints,
                "embed_dim": state.backbone.embed_dim,
                "feature_dim": state.backbone.config.feature_dim,
            },
            "head": {
                "kind": head.kind,
                "rows": head.num_classes,
                "old_rows": head.old_rows,
                "frozen_rows": head.frozen_rows,
            },
            "codebook": None if codebook is None else {
                "blocks": [block.shape[0] for block in codebook.pool_blocks],
                "reserved": codebook.reserved,
            },
            "attachment": None if state.attachment is None else state.attachment.mode,
            "history": state.history.to_dict(),
            "reports": [report.to_dict() for report in state.reports],
            "frozen": sorted(frozen),
            "tensors": entries,
        }
        return cls(manifest=manifest, tensors=tensors)

    def to_bytes(self):
        manifest = json.dumps(self.manifest, indent=1, sort_keys=True).encode("utf-8")
        chunks = [f"{MAGIC} {len(manifest)}\n".encode("utf-8"), manifest, b"\n"]
        for entry in self.manifest["tensors"]:
            chunks.append(self.tensors[entry["name"]].numpy().astype(BLOB_DTYPE).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data):
        """
        Parse a checkpoint, checking every blob against the manifest

        Raises
        ------
        CheckpointIntegrityError
            naming the first tensor whose blob is missing or mis-sized
        """
        newline = data.find(b"\n")
        header = data[:newline].decode("utf-8", errors="replace").split()
        if newline < 0 or len(header) != 2 or header[0] != MAGIC or not header[1].isdigit():
            raise CheckpointIntegrityError("<header>", "not a prompt_offset checkpoint")
        start = newline + 1
        end = start + int(header[1])
        try:
            manifest = json.loads(data[start:end].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as j_err:
            raise CheckpointIntegrityError("<manifest>", f"unreadable manifest: {j_err}") from j_err
        if data[end:end + 1] != b"\n":
            raise CheckpointIntegrityError("<manifest>", "manifest length does not match header")
        blobs = memoryview(data)[end + 1:]

        tensors, expected_offset = {}, 0
        for entry in manifest["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            if entry["length"] != count * BLOB_DTYPE.itemsize:
                raise CheckpointIntegrityError(
                    name, f"blob length {entry['length']} does not match shape {list(shape)}"
                )
            if entry["offset"] != expected_offset:
                raise CheckpointIntegrityError(name, f"blob offset {entry['offset']} expected {expected_offset}")
            if entry["offset"] + entry["length"] > len(blobs):
                raise CheckpointIntegrityError(name, "blob truncated")
            array = np.frombuffer(blobs, dtype=BLOB_DTYPE, count=count, offset=entry["offset"])
            tensors[name] = torch.from_numpy(array.astype(np.float32).reshape(shape))
            expected_offset += entry["length"]
        if expected_offset != len(blobs):
            last = manifest["tensors"][-1]["name"] if manifest["tensors"] else "<blobs>"
            raise CheckpointIntegrityError(last, f"{len(blobs) - expected_offset} unexpected trailing bytes")
        return cls(manifest=manifest, tensors=tensors)

    def to_state(self):
        """Rebuild modules and metrics; parameters match the saved ones bit for bit"""
        manifest = self.manifest
        config = from_dict(manifest["config"], validate=False)
        topo = manifest["topology"]
        topology = SkeletonTopology(topo["joint_count"], [tuple(e) for e in topo["edges"]], topo["name"])
        protocol = ContinualProtocol.from_dict(manifest["protocol"])
        seed = manifest["seed"]

        head_info = manifest["head"]
        backbone = BackboneModel(config.backbone, topology, manifest["dims"]["frames"], head_info["rows"], seed)
        backbone.head.old_rows = head_info["old_rows"]
        backbone.head.frozen_rows = head_info["frozen_rows"]

        state = PoetState(
            config=config,
            protocol=protocol,
            topology=topology,
            backbone=backbone,
            session=manifest["session"],
            history=AccuracyHistory.from_dict(manifest["history"]),
            reports=[SessionReport.from_dict(r) for r in manifest["reports"]],
        )
        if manifest["codebook"] is not None:
            blocks = manifest["codebook"]["blocks"]
            codebook = PromptCodebook(backbone, blocks[0], seed)
            for size in blocks[1:]:
                codebook.pool_blocks.append(nn.Parameter(torch.zeros(size, codebook.joints, codebook.embed_dim)))
            codebook.keys = nn.Parameter(torch.zeros(sum(blocks), codebook.embed_dim))
            codebook.reserved = manifest["codebook"]["reserved"]
            state.codebook = codebook
        if manifest["attachment"] is not None:
            state.attachment = PromptAttachment(
                manifest["attachment"], state.frames, backbone.embed_dim, prompt_count=state.prompt_count
            )

        frozen = set(manifest["frozen"])
        for prefix, module in state.modules().items():
            strip = len(prefix) + 1
            module.load_state_dict(
                {name[strip:]: t for name, t in self.tensors.items() if name.startswith(prefix + ".")},
                strict=True,
            )
            for name, param in module.named_parameters():
                param.requires_grad_(f"{prefix}.{name}" not in frozen)
        state.set_mode(True)
        return state


def save_checkpoint(state, path):
    """Write `state` (a PoetState or Checkpoint) to `path`, returning the path"""
    checkpoint = state if isinstance(state, Checkpoint) else Checkpoint.from_state(state)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fout:
        fout.write(checkpoint.to_bytes())
    tmp.replace(path)
    LOGGER.info("Saved checkpoint of session %d to %s", checkpoint.session, path)
    return path


def read_manifest(path):
    """Manifest of a checkpoint file without decoding its tensors"""
    with open(path, "rb") as fin:
        header = fin.readline().decode("utf-8", errors="replace").split()
        if len(header) != 2 or header[0] != MAGIC or not header[1].isdigit():
            raise CheckpointIntegrityError("<header>", "not a prompt_offset checkpoint")
        try:
            return json.loads(fin.read(int(header[1])).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as j_err:
            raise CheckpointIntegrityError("<manifest>", f"unreadable manifest: {j_err}") from j_err


def load_checkpoint(path):
    """Load a checkpoint file into a PoetState"""
    with open(path, "rb") as fin:
        data = fin.read()
    state = Checkpoint.from_bytes(data).to_state()
    LOGGER.info("Loaded checkpoint of session %d from %s", state.session, path)
    return state
