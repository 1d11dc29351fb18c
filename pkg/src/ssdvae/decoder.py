"""Token reconstruction with attention over inferred frame embeddings."""
from __future__ import annotations

import torch
from torch import nn

from .diffcore import DTYPE, ContractViolation
from .seqnets import EmbeddingTable, GruStack, run_unigru


class DecoderWeights(nn.Module):
    """W^_in (d_e x d_dec), W^_out (V x d_e); E^F shared with the encoder.

    The ``concat`` variant uses ``tanh(W^_cat [W^_in z; c])`` with W^_cat of
    shape d_e x 2 d_e in place of the sum of two tanh terms.
    """

    def __init__(self, dec_hidden: int, frame_dim: int, vocab_size: int,
                 frames: EmbeddingTable, attention: str = "additive"):
        super().__init__()
        self.attention = attention
        self.w_in = nn.Parameter(torch.zeros(frame_dim, dec_hidden, dtype=DTYPE))
        self.w_out = nn.Parameter(torch.zeros(vocab_size, frame_dim, dtype=DTYPE))
        if attention == "concat":
            self.w_cat = nn.Parameter(torch.zeros(frame_dim, 2 * frame_dim, dtype=DTYPE))
        self.frames = frames


def frame_context(frames: torch.Tensor, frame_table: EmbeddingTable) -> torch.Tensor:
    """E^M = f E^F: stacked simplex frames (..., M, F) -> (..., M, d_e)."""
    if frames.shape[-1] != frame_table.rows:
        raise ContractViolation(f"frame width {frames.shape[-1]} != F={frame_table.rows}")
    return frame_table.mix(frames)


def decode_token_step(EM: torch.Tensor, z: torch.Tensor,
                      weights: DecoderWeights) -> tuple[torch.Tensor, torch.Tensor]:
    """Logits g and log p(w_t | f; z_t).

    z may carry a time axis: z (..., T, d_dec) with EM (..., M, d_e).
    """
    if not torch.isfinite(z).all():
        raise ContractViolation("decoder state z_t is not finite")
    query = z @ weights.w_in.T
    scores = query @ EM.transpose(-1, -2)
    alpha = torch.softmax(scores, dim=-1)
    context = alpha @ EM
    if weights.attention == "additive":
        mixed = torch.tanh(query) + torch.tanh(context)
    else:
        mixed = torch.tanh(torch.cat([query, context], dim=-1) @ weights.w_cat.T)
    logits = mixed @ weights.w_out.T
    return logits, torch.log_softmax(logits, dim=-1)


def shifted_inputs(tokens: torch.Tensor, bos: int) -> torch.Tensor:
    """Gold previous tokens with <s> at position 1."""
    start = torch.full((*tokens.shape[:-1], 1), bos, dtype=tokens.dtype)
    return torch.cat([start, tokens[..., :-1]], dim=-1)


def decode_sequence_teacher_forced(tokens: torch.Tensor, EM: torch.Tensor,
                                   embed: EmbeddingTable, stack: GruStack,
                                   weights: DecoderWeights, bos: int) -> torch.Tensor:
    """log p(w_t | f, w_<t) for every gold token; tokens (..., T) -> (..., T)."""
    if tokens.shape[-1] < 1:
        raise ContractViolation("cannot decode an empty token sequence")
    Z = run_unigru(embed.lookup(shifted_inputs(tokens, bos)), stack)
    _, logp = decode_token_step(EM, Z, weights)
    return logp.gather(-1, tokens.unsqueeze(-1)).squeeze(-1)


def beta_dec(EM: torch.Tensor, w_out: torch.Tensor) -> torch.Tensor:
    """Frame-to-token soft clustering W^_out tanh(E^M^T): (M, d_e) -> (V, M)."""
    return w_out @ torch.tanh(EM).transpose(-1, -2)
