"""Named random substreams derived from one master seed."""
from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(master: int, name: str, *index: int) -> int:
    """Stable 63-bit seed for substream ``name`` (plus optional integer indices)."""
    key = f"{int(master)}/{name}/" + "/".join(str(int(i)) for i in index)
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def numpy_rng(master: int, name: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name, *index))


def torch_rng(master: int, name: str, *index: int) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(master, name, *index))
