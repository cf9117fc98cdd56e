# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

import hashlib
import logging

import numpy as np
import torch

LOGGER = logging.getLogger(__name__)


def static_hash(str_tuple):
    """
    hash a tuple of bytes or objects serializable with str, get consistent results across runs
    without the hack of turning off the python hash seed
    """
    sha256 = hashlib.sha256()
    for strn in str_tuple:
        sha256.update(str(strn).encode("utf-8"))
    return sha256.hexdigest()


def derive_seed(seed, *salt):
    """
    Derive a 63-bit integer seed from `seed` and any number of salt values,
    e.g. `derive_seed(seed, "session", 3)`. Stable across processes.
    """
    digest = static_hash((seed,) + salt)
    return int(digest[:15], 16)


def numpy_rng(seed, *salt):
    """numpy Generator seeded from `derive_seed(seed, *salt)`"""
    return np.random.default_rng(derive_seed(seed, *salt))


def torch_generator(seed, *salt):
    """CPU torch.Generator seeded from `derive_seed(seed, *salt)`"""
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, *salt))
    return gen


def set_deterministic(seed):
    """
    Seed the global torch RNG and request deterministic kernels. Ops without
    a deterministic implementation only warn.
    """
    torch.manual_seed(derive_seed(seed, "global"))
    torch.use_deterministic_algorithms(True, warn_only=True)
    LOGGER.debug("Deterministic torch algorithms enabled, seed %s", seed)
