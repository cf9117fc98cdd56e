# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

from .skeleton import SkeletonSequence, SkeletonTopology, get_topology, stack_frames
from .protocol import SplitDataset, SessionSpec, ContinualProtocol, make_protocol
from .synthetic import synth_generate
from .loaders import load_skeleton_file, write_skeleton_file, resample_frames
