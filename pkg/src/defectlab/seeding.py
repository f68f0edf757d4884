"""Seed plumbing. All randomness in the project flows through one named seed.

Per-record generators are derived from (seed, *key) so that parallel and
serial dataset generation produce bit-identical output.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np
import torch


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch global state for a training run."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def _key_to_int(part: int | str) -> int:
    if isinstance(part, int):
        return part % (2**32)
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def rng_for(seed: int, *key: int | str) -> np.random.Generator:
    """Independent numpy generator for one (seed, key...) combination.

    The same (seed, key) always yields the same stream, regardless of how
    many other streams were drawn in between.
    """
    entropy = [seed % (2**32)] + [_key_to_int(p) for p in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def torch_generator(seed: int, *key: int | str) -> torch.Generator:
    """Torch CPU generator derived the same way as :func:`rng_for`."""
    entropy = [seed % (2**32)] + [_key_to_int(p) for p in key]
    mixed = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
    gen = torch.Generator()
    gen.manual_seed(int(mixed[0] ^ (mixed[1] << 1)) % (2**63))
    return gen
