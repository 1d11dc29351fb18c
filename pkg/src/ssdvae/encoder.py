"""Variational frame encoder q(f_m | f_{m-1}, I_m, w).

Each event's frame logits come from attention of the previous frame's
embedding over the bi-GRU states H, combined additively through tanh; an
observed frame is injected by adding ||gamma'||_2 to its logit before the
Gumbel-Softmax draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .diffcore import DTYPE, ContractViolation
from .gumbel import gumbel_noise, gumbel_softmax_sample
from .seqnets import EmbeddingTable, GruStack, bigru_encode

ATTENTION_KINDS = ("additive", "concat")


class EncoderWeights(nn.Module):
    """W_in (d_h x d_e), W_out (F x d_h); E^F is shared with the decoder.

    The ``concat`` variant replaces ``tanh(W_in e) + tanh(c)`` with
    ``tanh(W_cat [W_in e; c])``, W_cat of shape d_h x 2 d_h.
    """

    def __init__(self, hidden_dim: int, frame_dim: int, frames: EmbeddingTable,
                 attention: str = "additive"):
        super().__init__()
        if attention not in ATTENTION_KINDS:
            raise ContractViolation(f"unknown attention kind {attention!r}")
        self.attention = attention
        self.w_in = nn.Parameter(torch.zeros(hidden_dim, frame_dim, dtype=DTYPE))
        self.w_out = nn.Parameter(torch.zeros(frames.rows, hidden_dim, dtype=DTYPE))
        if attention == "concat":
            self.w_cat = nn.Parameter(torch.zeros(hidden_dim, 2 * hidden_dim, dtype=DTYPE))
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.w_out.shape[0]


@dataclass
class FrameState:
    gamma: torch.Tensor          # post-injection logits gamma_m
    sample: torch.Tensor         # Gumbel-Softmax draw f_m
    normalized: torch.Tensor     # softmax(gamma_m), used by the losses
    attention: torch.Tensor      # alpha over token positions


def check_observation(obs: torch.Tensor) -> None:
    """Each I_m must be all-zero or exactly one-hot."""
    ok_values = ((obs == 0) | (obs == 1)).all()
    sums = obs.sum(dim=-1)
    if not ok_values or not ((sums == 0) | (sums == 1)).all():
        raise ContractViolation("observation vectors must be all-zero or one-hot")


def observation_mask(labels: torch.Tensor, n_frames: int) -> torch.Tensor:
    """Frame indices (-1 = unobserved) -> one-hot/zero rows of width F."""
    obs = torch.zeros(*labels.shape, n_frames, dtype=DTYPE)
    seen = labels >= 0
    obs[seen] = nn.functional.one_hot(labels[seen], n_frames).to(DTYPE)
    return obs


def inject_observation(gamma_raw: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
    """gamma = gamma' + ||gamma'||_2 * I."""
    return gamma_raw + gamma_raw.norm(dim=-1, keepdim=True) * obs


def uniform_frame(n_frames: int, batch_shape=()) -> torch.Tensor:
    return torch.full((*batch_shape, n_frames), 1.0 / n_frames, dtype=DTYPE)


def raw_frame_logits(f_prev: torch.Tensor, H: torch.Tensor, weights: EncoderWeights,
                     pad_mask: torch.Tensor | None = None):
    e_prev = weights.frames.mix(f_prev)
    query = e_prev @ weights.w_in.T
    scores = (H @ query.unsqueeze(-1)).squeeze(-1)
    if pad_mask is not None:
        scores = scores.masked_fill(~pad_mask, float("-inf"))
    alpha = torch.softmax(scores, dim=-1)
    context = (alpha.unsqueeze(-2) @ H).squeeze(-2)
    if weights.attention == "additive":
        mixed = torch.tanh(query) + torch.tanh(context)
    else:
        mixed = torch.tanh(torch.cat([query, context], dim=-1) @ weights.w_cat.T)
    return mixed @ weights.w_out.T, alpha


def encode_event_step(f_prev: torch.Tensor, obs: torch.Tensor, H: torch.Tensor,
                      weights: EncoderWeights, temperature: float, noise: torch.Tensor,
                      pad_mask: torch.Tensor | None = None,
                      validate: bool = True) -> FrameState:
    """Draw the next frame. Shapes: f_prev/obs/noise (..., F), H (..., T, d_h)."""
    if H.shape[-2] < 1:
        raise ContractViolation("encoder states H are empty")
    if validate:
        check_observation(obs)
    gamma_raw, alpha = raw_frame_logits(f_prev, H, weights, pad_mask)
    gamma = inject_observation(gamma_raw, obs)
    sample = gumbel_softmax_sample(gamma, temperature, noise)
    return FrameState(gamma, sample, torch.softmax(gamma, dim=-1), alpha)


def encode_sequence(x: torch.Tensor, obs: torch.Tensor, weights: EncoderWeights,
                    stack: GruStack, temperature: float, noise,
                    H: torch.Tensor | None = None) -> list[FrameState]:
    """Run the bi-GRU once, then chain the frame draws m = 1..M from a uniform f_0.

    x: embedded tokens (..., T, d_in); obs: (..., M, F). ``noise`` is either a
    (..., M, F) tensor or a torch.Generator to draw it from.
    """
    if H is None:
        H = bigru_encode(x, stack)
    M, F = obs.shape[-2], obs.shape[-1]
    if isinstance(noise, torch.Generator):
        noise = gumbel_noise(obs.shape, noise)
    check_observation(obs)
    f_prev = uniform_frame(F, obs.shape[:-2])
    states = []
    for m in range(M):
        st = encode_event_step(f_prev, obs[..., m, :], H, weights, temperature,
                               noise[..., m, :], validate=False)
        states.append(st)
        f_prev = st.sample
    return states


def beta_enc(H: torch.Tensor, w_out: torch.Tensor) -> torch.Tensor:
    """Token-to-frame soft clustering W_out tanh(H^T): (T, d_h) -> (F, T)."""
    if H.shape[-1] != w_out.shape[1]:
        raise ContractViolation(f"H width {H.shape[-1]} != W_out width {w_out.shape[1]}")
    return (torch.tanh(H) @ w_out.T).transpose(-1, -2)
