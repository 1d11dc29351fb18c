"""The frame VAE: bi-GRU encoder with chained Gumbel-Softmax frames, and an
autoregressive decoder attending over the inferred frame embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelSection
from .decoder import (DecoderWeights, beta_dec, decode_sequence_teacher_forced,
                      decode_token_step, frame_context)
from .diffcore import DTYPE, ContractViolation
from .encoder import (EncoderWeights, encode_event_step, encode_sequence, observation_mask,
                      uniform_frame, beta_enc)
from .gumbel import gumbel_noise
from .objective import (LossBreakdown, ObjectiveConfig, classification_loss,
                        entropy_regularizer, reconstruction_loss, total_loss)
from .seqnets import (EmbeddingTable, GruStack, bigru_encode, initial_states,
                      unigru_decode_step)


class FrameVAE(nn.Module):
    kind = "ssdvae"

    def __init__(self, cfg: ModelSection, vocab_size: int, n_frames: int, bos: int = 1):
        super().__init__()
        self.cfg = cfg
        self.bos = bos
        self.temperature = cfg.temperature
        self.frame_embeddings = EmbeddingTable(n_frames, cfg.frame_dim)
        self.token_embeddings = EmbeddingTable(vocab_size, cfg.embed_dim)
        self.encoder_rnn = GruStack(cfg.embed_dim, cfg.enc_hidden, cfg.enc_layers, bidirectional=True)
        self.encoder = EncoderWeights(self.encoder_rnn.output_size, cfg.frame_dim,
                                      self.frame_embeddings, cfg.attention)
        self.decoder_rnn = GruStack(cfg.embed_dim, cfg.dec_hidden, cfg.dec_layers)
        self.decoder = DecoderWeights(cfg.dec_hidden, cfg.frame_dim, vocab_size,
                                      self.frame_embeddings, cfg.attention)

    @property
    def n_frames(self) -> int:
        return self.frame_embeddings.rows

    @property
    def tokens_per_event(self) -> int:
        return 5 if self.cfg.tup else 4

    def n_events(self, tokens: torch.Tensor) -> int:
        T = tokens.shape[-1]
        if T % self.tokens_per_event:
            raise ContractViolation(f"{T} tokens do not split into {self.tokens_per_event}-token events")
        return T // self.tokens_per_event

    def noise_shape(self, tokens: torch.Tensor) -> tuple[int, ...]:
        return (*tokens.shape[:-1], self.n_events(tokens), self.n_frames)

    def infer(self, tokens: torch.Tensor, observed: torch.Tensor | None, noise: torch.Tensor):
        """Encoder states H and the chain of FrameStates for every event."""
        M = self.n_events(tokens)
        if observed is None:
            obs = torch.zeros(*tokens.shape[:-1], M, self.n_frames, dtype=DTYPE)
        else:
            obs = observation_mask(observed, self.n_frames)
        H = bigru_encode(self.token_embeddings.lookup(tokens), self.encoder_rnn)
        states = encode_sequence(None, obs, self.encoder, self.encoder_rnn,
                                 self.temperature, noise, H=H)
        return H, states, obs

    def token_log_probs(self, tokens: torch.Tensor, frames: torch.Tensor) -> torch.Tensor:
        EM = frame_context(frames, self.frame_embeddings)
        return decode_sequence_teacher_forced(tokens, EM, self.token_embeddings,
                                              self.decoder_rnn, self.decoder, self.bos)

    def _chain_loss(self, tokens, observed, noise, objective: ObjectiveConfig):
        _, states, obs = self.infer(tokens, observed, noise)
        frames = torch.stack([s.sample for s in states], dim=-2)
        normalized = torch.stack([s.normalized for s in states], dim=-2)
        L_w = reconstruction_loss(self.token_log_probs(tokens, frames))
        L_q = entropy_regularizer(normalized)
        L_c = classification_loss(normalized, obs)
        return L_w, L_q, L_c

    def loss(self, tokens: torch.Tensor, observed: torch.Tensor | None, noise: torch.Tensor,
             objective: ObjectiveConfig) -> LossBreakdown:
        """Per-document loss terms; noise is (..., M, F) or (S, ..., M, F)."""
        chains = noise if noise.dim() == tokens.dim() + 2 else noise.unsqueeze(0)
        parts = [self._chain_loss(tokens, observed, n, objective) for n in chains]
        L_w, L_q, L_c = (torch.stack(p).mean(0) for p in zip(*parts))
        return LossBreakdown(L_w, L_q, L_c, total_loss(L_w, L_q, L_c, objective), tokens.shape[-1])

    def nll(self, tokens: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        """Per-document token NLL with no frames observed."""
        chains = noise if noise.dim() == tokens.dim() + 2 else noise.unsqueeze(0)
        out = []
        for n in chains:
            _, states, _ = self.infer(tokens, None, n)
            frames = torch.stack([s.sample for s in states], dim=-2)
            out.append(reconstruction_loss(self.token_log_probs(tokens, frames)))
        return torch.stack(out).mean(0)

    def frame_posteriors(self, tokens: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        """softmax(gamma_m) for every event, nothing observed: (..., M, F)."""
        _, states, _ = self.infer(tokens, None, noise)
        return torch.stack([s.normalized for s in states], dim=-2)

    def betas(self, tokens: torch.Tensor, noise: torch.Tensor):
        """beta_enc (..., F, T), beta_dec (..., V, M) and argmax frames (..., M)."""
        if self.cfg.attention != "additive":
            raise ContractViolation("cluster matrices are defined for additive attention only")
        H, states, _ = self.infer(tokens, None, noise)
        frames = torch.stack([s.sample for s in states], dim=-2)
        EM = frame_context(frames, self.frame_embeddings)
        return (beta_enc(H, self.encoder.w_out), beta_dec(EM, self.decoder.w_out),
                frames.argmax(-1))


@dataclass
class Script:
    seed_frame: int
    events: list[tuple[int, list[int]]]


def _pick(logp: torch.Tensor, temperature: float, gen: torch.Generator,
          forbidden: tuple[int, ...], max_redraws: int) -> int:
    if temperature <= 0:
        masked = logp.clone()
        masked[list(forbidden)] = float("-inf")
        return int(masked.argmax())
    probs = torch.softmax(logp / temperature, dim=-1)
    for _ in range(max_redraws):
        tok = int(torch.multinomial(probs, 1, generator=gen))
        if tok not in forbidden:
            return tok
    masked = logp.clone()
    masked[list(forbidden)] = float("-inf")
    return int(masked.argmax())


@torch.no_grad()
def generate_script(model: FrameVAE, seed_event: list[int], num_events: int,
                    gen: torch.Generator, temperature: float = 1.0,
                    forbidden: tuple[int, ...] = (0, 1), max_redraws: int = 100) -> Script:
    """Frame-then-tokens generation from a seed event.

    Before each new event the generated prefix is re-encoded, the frame chain
    is re-inferred and extended by one draw, then the event's four tokens are
    sampled one at a time. Sampled forbidden tokens (unknown, <s>) are redrawn
    up to ``max_redraws`` times, then the most probable allowed token is used.
    ``temperature`` <= 0 is greedy for both frames and tokens.
    """
    if num_events < 1:
        raise ContractViolation("num_events must be >= 1")
    if model.tokens_per_event != 4:
        raise ContractViolation("generation supports the default 4-token layout")
    if len(seed_event) != 4:
        raise ContractViolation("seed event has 4 tokens")
    greedy = temperature <= 0
    F = model.n_frames
    tokens = list(seed_event)
    dec_states = initial_states(model.decoder_rnn)
    z = None
    prev_token = model.bos
    for tok in tokens:
        z, dec_states = unigru_decode_step(model.token_embeddings.weight[prev_token], dec_states,
                                           model.decoder_rnn)
        prev_token = tok

    def frame_chain(n_new: int) -> torch.Tensor:
        t = torch.tensor(tokens)
        H = bigru_encode(model.token_embeddings.lookup(t), model.encoder_rnn)
        M = len(tokens) // 4
        f_prev = uniform_frame(F)
        out = []
        for _ in range(M + n_new):
            noise = torch.zeros(F, dtype=DTYPE) if greedy else gumbel_noise(F, gen)
            st = encode_event_step(f_prev, torch.zeros(F, dtype=DTYPE), H, model.encoder,
                                   model.temperature, noise, validate=False)
            out.append(st.sample)
            f_prev = st.sample
        return torch.stack(out)

    seed_frame = int(frame_chain(0)[0].argmax())
    events = []
    for _ in range(num_events):
        frames = frame_chain(1)
        EM = frame_context(frames, model.frame_embeddings)
        new = []
        for _ in range(4):
            z, dec_states = unigru_decode_step(model.token_embeddings.weight[prev_token], dec_states,
                                               model.decoder_rnn)
            _, logp = decode_token_step(EM, z, model.decoder)
            tok = _pick(logp, temperature, gen, forbidden, max_redraws)
            new.append(tok)
            prev_token = tok
        tokens.extend(new)
        events.append((int(frames[-1].argmax()), new))
    return Script(seed_frame, events)
