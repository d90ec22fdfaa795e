"""Seed management.

Every random draw in the pipeline flows from one top-level seed, split into
independent labelled streams so that components cannot perturb each other's
sequences. Labels in use:

    "scene"    synthetic scene generation
    "init"     network weight initialization
    "shuffle"  per-epoch tile shuffling
    "dropout"  dropout masks during training
    "sampler"  hyperparameter sampling (split again per trial id)
"""

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Deterministic generator for (seed, label), independent across labels."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _label_entropy(label)])))


def spawn(seed: int, label: str, index: int) -> np.random.Generator:
    """Indexed sub-stream, e.g. one per trial, stable under parallel execution.

    Uses a spawn key rather than appending the index to the entropy: an
    appended 0 word leaves the seed sequence unchanged, which would alias
    index 0 with the parent stream.
    """
    seq = np.random.SeedSequence([seed, _label_entropy(label)], spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(seq))
