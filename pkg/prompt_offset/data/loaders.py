# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
loaders.py

Plain-text skeleton clip files. A file holds zero or more clips separated by
blank lines. Each clip starts with a header line

    T J [class_id [subject_id]]

followed by T*J lines `x y z` (frame-major, joint-minor). Clips are resampled
to a configured number of frames by uniform index mapping.
"""

import logging
from pathlib import Path

import numpy as np

from prompt_offset.data.skeleton import FORMAT_TOPOLOGY, SkeletonSequence, get_topology
from prompt_offset.exceptions import ConfigurationError, SkeletonParseError

LOGGER = logging.getLogger(__name__)

FORMAT_JOINTS = {
    fmt: get_topology(name).joint_count for fmt, name in FORMAT_TOPOLOGY.items()
}


def resample_frames(frames, T):
    """
    Uniformly resample a T_src x J x 3 clip to T frames using the
    index map floor(i * T_src / T); shorter clips repeat frames.
    """
    t_src = frames.shape[0]
    index = (np.arange(T) * t_src) // T
    return frames[index]


def _parse_header(path, lineno, line, expected_joints):
    fields = line.split()
    if len(fields) < 2 or len(fields) > 4:
        raise SkeletonParseError(path, lineno, f"expected header 'T J [class_id [subject_id]]', got {line!r}")
    try:
        values = [int(v) for v in fields]
    except ValueError as v_err:
        raise SkeletonParseError(path, lineno, f"non-integer header {line!r}") from v_err
    t_src, joints = values[:2]
    if t_src < 1:
        raise SkeletonParseError(path, lineno, "empty clip (T < 1)")
    if joints != expected_joints:
        raise SkeletonParseError(path, lineno, f"clip has {joints} joints, format expects {expected_joints}")
    class_id = values[2] if len(values) > 2 else 0
    subject_id = values[3] if len(values) > 3 else None
    if class_id < 0:
        raise SkeletonParseError(path, lineno, f"negative class id {class_id}")
    return t_src, joints, class_id, subject_id


def _decode_line(path, lineno, raw):
    """Decode one utf-8 line, naming the line on failure"""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as u_err:
        raise SkeletonParseError(path, lineno, f"invalid utf-8 at byte {u_err.start}") from u_err


def load_skeleton_file(path, format_tag, frames=64):
    """
    Load all clips of a skeleton text file

    Parameters
    ----------
    path : str/Path
    format_tag : {'ntu-style', 'shrec-style'}
        fixes the joint count to 25 or 22 respectively
    frames : int
        number of frames T every clip is resampled to

    Returns
    -------
    sequences : List[SkeletonSequence]
    """
    if format_tag not in FORMAT_JOINTS:
        raise ConfigurationError("dataset.format", f"unknown format {format_tag!r}, choose from {list(FORMAT_JOINTS)}")
    expected_joints = FORMAT_JOINTS[format_tag]

    sequences = []
    header = None
    rows = []

    def finish(lineno):
        t_src, joints, class_id, subject_id = header
        if len(rows) != t_src * joints:
            raise SkeletonParseError(
                path, lineno, f"clip declares {t_src * joints} joint lines, found {len(rows)}"
            )
        clip = np.asarray(rows, dtype=np.float64).reshape(t_src, joints, 3)
        sequences.append(SkeletonSequence(resample_frames(clip, frames), class_id, subject_id))

    with open(path, "rb") as fin:
        lineno = 0
        for lineno, raw in enumerate(fin, start=1):
            line = _decode_line(path, lineno, raw).strip()
            if not line:
                if header is not None:
                    finish(lineno)
                    header, rows = None, []
                continue
            if header is None:
                header = _parse_header(path, lineno, line, expected_joints)
                continue
            fields = line.split()
            if len(fields) != 3:
                raise SkeletonParseError(path, lineno, f"expected 'x y z', got {line!r}")
            try:
                coords = [float(v) for v in fields]
            except ValueError as v_err:
                raise SkeletonParseError(path, lineno, f"non-numeric coordinate in {line!r}") from v_err
            if not np.all(np.isfinite(coords)):
                raise SkeletonParseError(path, lineno, f"non-finite coordinate in {line!r}")
            if len(rows) == header[0] * header[1]:
                raise SkeletonParseError(path, lineno, "more joint lines than the header declares")
            rows.append(coords)
        if header is not None:
            finish(lineno)

    LOGGER.info("Loaded %d clips from %s", len(sequences), path)
    return sequences


def write_skeleton_file(sequences, path):
    """Write sequences in the text schema read by `load_skeleton_file`"""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fout:
        for i, seq in enumerate(sequences):
            if i:
                fout.write("\n")
            T, J = seq.shape
            header = [T, J, seq.class_id]
            if seq.subject_id is not None:
                header.append(seq.subject_id)
            fout.write(" ".join(str(v) for v in header) + "\n")
            for x, y, z in seq.frames.reshape(-1, 3):
                fout.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    return path
