"""Autoregressive language-model baselines and supervised frame classifiers.

The language models are unidirectional GRU stacks: a bidirectional LM cannot
score left-to-right perplexity. The bidirectional stack appears only in the
frame classifier, where the whole event is legitimately visible.
"""
from __future__ import annotations

import torch
from torch import nn

from .config import ModelSection
from .diffcore import DTYPE, ContractViolation
from .objective import LossBreakdown, ObjectiveConfig, reconstruction_loss
from .seqnets import EmbeddingTable, GruStack, bigru_encode, run_unigru
from .decoder import shifted_inputs

N_ROLES = 4


def role_indices(T: int, tokens_per_event: int = 4) -> torch.Tensor:
    """verb, subject, object, modifier cycling; a <tup> position gets -1."""
    pos = torch.arange(T) % tokens_per_event
    return torch.where(pos < N_ROLES, pos, torch.full_like(pos, -1))


class RNNLM(nn.Module):
    """GRU language model; with ``use_roles`` a learned role vector is
    concatenated to every token embedding (RNNLM+ROLE)."""

    def __init__(self, cfg: ModelSection, vocab_size: int, n_frames: int = 0,
                 bos: int = 1, use_roles: bool = False):
        super().__init__()
        self.cfg = cfg
        self.bos = bos
        self.use_roles = use_roles
        self.kind = "rnnlm_role" if use_roles else "rnnlm"
        self.token_embeddings = EmbeddingTable(vocab_size, cfg.embed_dim)
        width = cfg.embed_dim
        if use_roles:
            self.role_embeddings = EmbeddingTable(N_ROLES, cfg.role_dim)
            width += cfg.role_dim
        self.rnn = GruStack(width, cfg.dec_hidden, cfg.dec_layers)
        self.output = nn.Linear(cfg.dec_hidden, vocab_size, dtype=DTYPE)

    @property
    def tokens_per_event(self) -> int:
        return 5 if self.cfg.tup else 4

    def noise_shape(self, tokens):
        return None

    def inputs(self, tokens: torch.Tensor) -> torch.Tensor:
        # position t is predicted from tokens < t, with the role of position t
        x = self.token_embeddings.lookup(shifted_inputs(tokens, self.bos))
        if not self.use_roles:
            return x
        roles = role_indices(tokens.shape[-1], self.tokens_per_event)
        table = torch.cat([self.role_embeddings.weight,
                           torch.zeros(1, self.cfg.role_dim, dtype=DTYPE)])
        r = table[torch.where(roles >= 0, roles, N_ROLES)]
        return torch.cat([x, r.expand(*x.shape[:-1], -1)], dim=-1)

    def token_log_probs(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] < 1:
            raise ContractViolation("cannot score an empty token sequence")
        Z = run_unigru(self.inputs(tokens), self.rnn)
        logp = torch.log_softmax(self.output(Z), dim=-1)
        return logp.gather(-1, tokens.unsqueeze(-1)).squeeze(-1)

    def nll(self, tokens: torch.Tensor, noise=None) -> torch.Tensor:
        return reconstruction_loss(self.token_log_probs(tokens))

    def loss(self, tokens, observed, noise, objective: ObjectiveConfig) -> LossBreakdown:
        L_w = self.nll(tokens)
        zero = torch.zeros_like(L_w)
        return LossBreakdown(L_w, zero, zero, L_w, tokens.shape[-1])


def rnnlm_nll(tokens: torch.Tensor, model: RNNLM) -> torch.Tensor:
    if model.use_roles:
        raise ContractViolation("use rnnlm_role_nll for a role-augmented model")
    return model.nll(tokens)


def rnnlm_role_nll(tokens: torch.Tensor, model: RNNLM) -> torch.Tensor:
    if not model.use_roles:
        raise ContractViolation("model has no role embeddings")
    return model.nll(tokens)


class FrameClassifier(nn.Module):
    """Bi-GRU over one event, then linear -> softplus -> dropout to F logits."""

    def __init__(self, cfg: ModelSection, vocab_size: int, n_frames: int,
                 use_roles: bool = False, dropout: float = 0.15):
        super().__init__()
        self.cfg = cfg
        self.use_roles = use_roles
        self.token_embeddings = EmbeddingTable(vocab_size, cfg.embed_dim)
        width = cfg.embed_dim
        if use_roles:
            self.role_embeddings = EmbeddingTable(N_ROLES, cfg.role_dim)
            width += cfg.role_dim
        self.rnn = GruStack(width, cfg.enc_hidden, cfg.enc_layers, bidirectional=True)
        self.linear = nn.Linear(self.rnn.output_size, n_frames, dtype=DTYPE)
        self.dropout = nn.Dropout(dropout)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.token_embeddings.lookup(tokens)
        if self.use_roles:
            r = self.role_embeddings.weight[role_indices(tokens.shape[-1]).clamp_min(0)]
            x = torch.cat([x, r.expand(*x.shape[:-1], -1)], dim=-1)
        H = bigru_encode(x, self.rnn)
        n = self.rnn.hidden_size
        # last forward state and last backward state (position 0)
        final = torch.cat([H[..., -1, :n], H[..., 0, n:]], dim=-1)
        return self.dropout(nn.functional.softplus(self.linear(final)))


def supervised_frame_head(tokens: torch.Tensor, model: FrameClassifier) -> torch.Tensor:
    if tokens.shape[-1] != 4:
        raise ContractViolation("frame classifier takes one 4-token event")
    return model(tokens)
