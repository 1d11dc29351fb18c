"""Loss terms of the weighted ELBO.

The trainer minimises ``J = L_w - alpha_q * L_q + alpha_c * L_c`` where L_w is
the token NLL, L_q the entropy of the normalised frame logits and L_c the
cross-entropy on observed frames (all in nats). Rewarding entropy and
penalising cross-entropy is what "maximise reconstruction + alpha_q * entropy
while predicting the observed frames" means once written as a minimisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .diffcore import ContractViolation


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha_q: float = 0.1
    alpha_c: float = 0.1
    samples: int = 1

    def __post_init__(self):
        if self.alpha_q < 0 or self.alpha_c < 0:
            raise ContractViolation("loss weights must be non-negative")
        if self.samples < 1:
            raise ContractViolation("need at least one sample chain")


@dataclass
class LossBreakdown:
    """Per-document loss terms (tensors of shape batch_shape)."""
    L_w: torch.Tensor
    L_q: torch.Tensor
    L_c: torch.Tensor
    J: torch.Tensor
    token_count: int


def reconstruction_loss(log_probs: torch.Tensor) -> torch.Tensor:
    """L_w = -sum_t log p(w_t | ...), summed over the last axis."""
    if log_probs.shape[-1] == 0:
        raise ContractViolation("no token log-probabilities")
    return -log_probs.sum(dim=-1)


def _entropy(p: torch.Tensor) -> torch.Tensor:
    return -(p * torch.log(p.clamp_min(1e-300))).sum(dim=-1)


def entropy_regularizer(normalized: torch.Tensor) -> torch.Tensor:
    """L_q = sum_m H(softmax(gamma_m)); normalized is (..., M, F)."""
    return _entropy(normalized).sum(dim=-1)


def classification_loss(normalized: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
    """L_c = -sum over observed events of I_m . log softmax(gamma_m)."""
    logq = torch.log(normalized.clamp_min(1e-300))
    return -(obs * logq).sum(dim=(-1, -2))


def total_loss(L_w, L_q, L_c, config: ObjectiveConfig):
    if config.alpha_q < 0 or config.alpha_c < 0:
        raise ContractViolation("loss weights must be non-negative")
    return L_w - config.alpha_q * L_q + config.alpha_c * L_c


def uniform_prior_term(n_events: int, n_frames: int) -> float:
    """E_q[log p(f)] under the uniform frame prior: a constant, -M ln F."""
    return -n_events * math.log(n_frames)
