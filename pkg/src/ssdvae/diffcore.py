"""Gradient plumbing: named parameter sets, backward pass, finite differences,
Adam and global-norm clipping.

Tensors are float64 torch tensors; torch's autograd records the forward tape
and discards it after each backward pass.
"""
from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Callable

import torch

DTYPE = torch.float64


class ContractViolation(ValueError):
    """Raised when an operation's preconditions are not met."""


class NumericError(FloatingPointError):
    """Raised when a NaN/Inf shows up during training arithmetic."""


class ParameterSet(Mapping):
    """Ordered name -> tensor map with a stable iteration order."""

    def __init__(self, items=()):
        self._items: dict[str, torch.Tensor] = {}
        for name, tensor in items:
            if name in self._items:
                raise ContractViolation(f"duplicate parameter name {name!r}")
            self._items[name] = tensor

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParameterSet":
        return cls(module.named_parameters())

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def numel(self) -> int:
        return sum(t.numel() for t in self._items.values())

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self._items.items()}

    def load(self, values: Mapping[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, v in self._items.items():
                v.copy_(values[k])


def backward_gradients(loss: torch.Tensor, params: ParameterSet,
                       detect_anomaly: bool = True) -> dict[str, torch.Tensor]:
    """d(loss)/d(param) for every parameter; unreachable parameters get zeros.

    With ``detect_anomaly`` the backward pass checks every node, so a NaN is
    reported with the name of the backward function that produced it.
    """
    if loss.dim() != 0 and loss.numel() != 1:
        raise ContractViolation(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    tensors = list(params.values())
    try:
        with torch.autograd.set_detect_anomaly(detect_anomaly, check_nan=True):
            grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    except RuntimeError as exc:
        if "nan" in str(exc).lower():
            raise NumericError(f"NaN during gradient accumulation: {exc}") from exc
        raise
    out = {}
    for (name, p), g in zip(params.items(), grads):
        if g is None:
            g = torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        out[name] = g
    return out


@dataclass
class FiniteDifferenceReport:
    max_rel_error: dict[str, float]
    tolerance: float
    entries_checked: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], params: ParameterSet,
                            step: float = 1e-5, tolerance: float = 1e-4,
                            max_entries: int | None = None,
                            seed: int = 0) -> FiniteDifferenceReport:
    """Compare autograd gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be deterministic in the current parameter values (freeze
    any noise it consumes). ``max_entries`` caps the entries probed per
    parameter; the subset is chosen with a seeded permutation.
    """
    with torch.no_grad():
        a, b = loss_fn(), loss_fn()
    if not torch.equal(a, b):
        raise ContractViolation("loss_fn is stochastic: two identical calls disagree")

    loss = loss_fn()
    analytic = backward_gradients(loss, params)
    gen = torch.Generator().manual_seed(seed)
    report = {}
    checked = 0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            ga = analytic[name].reshape(-1)
            idx = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_entries]
            worst = 0.0
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                cd = (up - down) / (2 * step)
                an = ga[i].item()
                err = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
                worst = max(worst, err)
                checked += 1
            report[name] = worst
    return FiniteDifferenceReport(report, tolerance, checked)


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, **kw) -> "OptimizerState":
        state = cls(**kw)
        for name, p in params.items():
            state.exp_avg[name] = torch.zeros_like(p, memory_format=torch.contiguous_format).detach()
            state.exp_avg_sq[name] = torch.zeros_like(p, memory_format=torch.contiguous_format).detach()
        return state


def adam_step(params: ParameterSet, grads: Mapping[str, torch.Tensor],
              state: OptimizerState) -> tuple[ParameterSet, OptimizerState]:
    """One bias-corrected Adam update, applied in place."""
    if state.step < 0:
        raise ContractViolation("optimizer step counter is negative")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1 - b1 ** t
    corr2 = 1 - b2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ContractViolation(
                    f"gradient for {name!r} has shape {tuple(g.shape)}, parameter {tuple(p.shape)}")
            m = state.exp_avg[name]
            v = state.exp_avg_sq[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / corr2).sqrt_().add_(state.epsilon)
            p.addcdiv_(m, denom, value=-state.learning_rate / corr1)
    state.step = t
    return params, state


def clip_global_norm(grads: Mapping[str, torch.Tensor],
                     max_norm: float = 5.0) -> tuple[dict[str, torch.Tensor], float]:
    """Scale all gradients by max_norm/g when their joint L2 norm g exceeds max_norm.

    Returns the (possibly scaled) gradients and the pre-clip norm.
    """
    if max_norm <= 0:
        raise ContractViolation("max_norm must be positive")
    if not grads:
        return {}, 0.0
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}, total
    return dict(grads), total
