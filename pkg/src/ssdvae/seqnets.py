"""GRU cells/stacks and embedding tables.

Gate convention (normative for this package)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~

Weight rows are stacked in the order (update, reset, candidate).
"""
from __future__ import annotations

import logging
import math
from pathlib import Path

import torch
from torch import nn

from .diffcore import DTYPE, ContractViolation

log = logging.getLogger(__name__)


class GruCell(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.zeros(3 * hidden_size, input_size, dtype=DTYPE))
        self.weight_hh = nn.Parameter(torch.zeros(3 * hidden_size, hidden_size, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(3 * hidden_size, dtype=DTYPE))

    def input_gates(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight_ih.T + self.bias

    def step_from_gates(self, gi: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        n = self.hidden_size
        gh = h @ self.weight_hh[: 2 * n].T
        z = torch.sigmoid(gi[..., :n] + gh[..., :n])
        r = torch.sigmoid(gi[..., n: 2 * n] + gh[..., n:])
        cand = torch.tanh(gi[..., 2 * n:] + (r * h) @ self.weight_hh[2 * n:].T)
        return (1 - z) * h + z * cand


def gru_cell_step(x: torch.Tensor, h: torch.Tensor, cell: GruCell) -> torch.Tensor:
    """One GRU update h -> h' for input x."""
    if x.shape[-1] != cell.input_size or h.shape[-1] != cell.hidden_size:
        raise ContractViolation(
            f"GRU cell expects input {cell.input_size}/hidden {cell.hidden_size}, "
            f"got {x.shape[-1]}/{h.shape[-1]}")
    return cell.step_from_gates(cell.input_gates(x), h)


def _run_direction(cell: GruCell, x: torch.Tensor, reverse: bool,
                   h0: torch.Tensor | None = None) -> torch.Tensor:
    # x: (..., T, d_in) -> (..., T, hidden)
    gi = cell.input_gates(x)
    T = x.shape[-2]
    h = h0 if h0 is not None else x.new_zeros(*x.shape[:-2], cell.hidden_size)
    outs = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h = cell.step_from_gates(gi[..., t, :], h)
        outs[t] = h
    return torch.stack(outs, dim=-2)


class GruStack(nn.Module):
    """Multi-layer GRU, optionally bidirectional (outputs concatenated fwd|bwd)."""

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 1,
                 bidirectional: bool = False):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.bidirectional = bidirectional
        dirs = 2 if bidirectional else 1
        self.forward_cells = nn.ModuleList()
        self.backward_cells = nn.ModuleList()
        width = input_size
        for _ in range(num_layers):
            self.forward_cells.append(GruCell(width, hidden_size))
            if bidirectional:
                self.backward_cells.append(GruCell(width, hidden_size))
            width = hidden_size * dirs

    @property
    def output_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)


def bigru_encode(x: torch.Tensor, stack: GruStack) -> torch.Tensor:
    """Encode (..., T, d_in) token embeddings into H of shape (..., T, 2*hidden)."""
    if not stack.bidirectional:
        raise ContractViolation("bigru_encode needs a bidirectional stack")
    if x.shape[-2] < 1:
        raise ContractViolation("cannot encode an empty sequence")
    if x.shape[-1] != stack.input_size:
        raise ContractViolation(f"input width {x.shape[-1]} != stack input {stack.input_size}")
    out = x
    for fwd, bwd in zip(stack.forward_cells, stack.backward_cells):
        out = torch.cat([_run_direction(fwd, out, False), _run_direction(bwd, out, True)], dim=-1)
    return out


def run_unigru(x: torch.Tensor, stack: GruStack) -> torch.Tensor:
    """Top-layer states for a whole sequence, zero initial states (layer-major)."""
    if stack.bidirectional:
        raise ContractViolation("run_unigru needs a unidirectional stack")
    if x.shape[-2] < 1:
        raise ContractViolation("cannot run over an empty sequence")
    out = x
    for cell in stack.forward_cells:
        out = _run_direction(cell, out, False)
    return out


def initial_states(stack: GruStack, batch_shape=(), dtype=DTYPE) -> list[torch.Tensor]:
    return [torch.zeros(*batch_shape, stack.hidden_size, dtype=dtype)
            for _ in range(stack.num_layers)]


def unigru_decode_step(x: torch.Tensor, states: list[torch.Tensor],
                       stack: GruStack) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Advance every layer by one step; returns (top-layer state z_t, new states)."""
    if stack.bidirectional:
        raise ContractViolation("unigru_decode_step needs a unidirectional stack")
    new = []
    inp = x
    for cell, h in zip(stack.forward_cells, states):
        inp = gru_cell_step(inp, h, cell)
        new.append(inp)
    return inp, new


class EmbeddingTable(nn.Module):
    def __init__(self, rows: int, dim: int, trainable: bool = True):
        super().__init__()
        self.rows = rows
        self.dim = dim
        self.weight = nn.Parameter(torch.zeros(rows, dim, dtype=DTYPE), requires_grad=trainable)

    def lookup(self, index: torch.Tensor) -> torch.Tensor:
        if index.numel() and (int(index.max()) >= self.rows or int(index.min()) < 0):
            raise ContractViolation(f"embedding index out of range [0, {self.rows})")
        return self.weight[index]

    def mix(self, simplex: torch.Tensor) -> torch.Tensor:
        """Convex combination of rows: simplex (..., rows) -> (..., dim)."""
        return simplex @ self.weight

    def load_text(self, path: str | Path, index_of: dict[str, int]) -> int:
        """Overwrite rows for tokens found in a ``token v1 v2 ...`` text file.

        Returns the number of rows replaced; unknown tokens keep their rows.
        """
        hits = 0
        with open(path, encoding="utf-8") as fh, torch.no_grad():
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                if len(parts) - 1 != self.dim:
                    raise ContractViolation(
                        f"{path}:{lineno}: expected {self.dim} values, found {len(parts) - 1}")
                idx = index_of.get(parts[0])
                if idx is None:
                    continue
                self.weight[idx] = torch.tensor([float(v) for v in parts[1:]], dtype=DTYPE)
                hits += 1
        log.info("loaded %d pretrained rows from %s", hits, path)
        return hits


def initialize(module: nn.Module, gen: torch.Generator) -> None:
    """Embeddings U(-0.1, 0.1); biases 0; matrices U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    with torch.no_grad():
        for _, mod in module.named_modules():
            for _, p in mod.named_parameters(recurse=False):
                if isinstance(mod, EmbeddingTable):
                    bound = 0.1
                elif p.dim() == 1:
                    p.zero_()
                    continue
                else:
                    bound = 1.0 / math.sqrt(p.shape[1])
                p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
