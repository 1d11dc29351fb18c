"""Gumbel(0, 1) noise and the relaxed categorical (Gumbel-Softmax) draw."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .diffcore import DTYPE, ContractViolation

UNIFORM_CLAMP = 1e-12


@dataclass(frozen=True)
class GumbelConfig:
    temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ContractViolation("Gumbel-Softmax temperature must be positive")


def gumbel_from_uniform(u: torch.Tensor) -> torch.Tensor:
    u = u.clamp(UNIFORM_CLAMP, 1 - UNIFORM_CLAMP)
    return -torch.log(-torch.log(u))


def gumbel_noise(shape, gen: torch.Generator | None = None) -> torch.Tensor:
    """Gumbel(0,1) draws of the given shape (an int n gives a length-n vector)."""
    if isinstance(shape, int):
        shape = (shape,)
    return gumbel_from_uniform(torch.rand(tuple(shape), generator=gen, dtype=DTYPE))


def gumbel_softmax_sample(logits: torch.Tensor, temperature: float,
                          noise: torch.Tensor) -> torch.Tensor:
    """softmax((logits + noise) / temperature) over the last axis."""
    if not temperature > 0:
        raise ContractViolation("temperature must be positive")
    if not torch.isfinite(logits).all():
        raise ContractViolation("Gumbel-Softmax logits must be finite")
    return torch.softmax((logits + noise) / temperature, dim=-1)
