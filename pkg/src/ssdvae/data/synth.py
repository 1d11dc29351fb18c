"""Synthetic frame-HMM corpora and their exact perplexity.

A document is a Markov chain of frames; every event draws its four slot
tokens independently from the current frame's per-slot tables. The forward
algorithm over frames gives the exact marginal likelihood of each document.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..config import SynthSection
from ..diffcore import ContractViolation
from ..rng import numpy_rng
from .corpus import EventDocument, write_corpus

SLOT_PREFIX = ("v", "s", "o", "m")
SPLITS = ("train", "valid", "test")


@dataclass
class SyntheticSpec:
    initial: np.ndarray          # (F,)
    transitions: np.ndarray      # (F, F) row-stochastic
    emissions: np.ndarray        # (F, 4, S) per-frame slot distributions
    slot_tokens: list[list[str]]
    events: int = 5
    n_train: int = 5000
    n_valid: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n_frames(self) -> int:
        return self.transitions.shape[0]

    @property
    def frame_labels(self) -> list[str]:
        return [f"frame{k:02d}" for k in range(self.n_frames)]

    def validate(self) -> None:
        F = self.transitions.shape[0]
        if self.transitions.shape != (F, F) or self.initial.shape != (F,):
            raise ContractViolation("transition/initial shapes disagree")
        if self.emissions.shape[:2] != (F, 4):
            raise ContractViolation("emissions must be (F, 4, S)")
        for name, arr in (("initial", self.initial), ("transitions", self.transitions),
                          ("emissions", self.emissions)):
            if (arr < 0).any() or not np.allclose(arr.sum(-1), 1.0, atol=1e-9, rtol=0):
                raise ContractViolation(f"{name} rows must be probability distributions")
        if any(len(toks) != self.emissions.shape[2] for toks in self.slot_tokens):
            raise ContractViolation("one token name per slot entry required")

    def slot_index(self) -> list[dict[str, int]]:
        return [{t: i for i, t in enumerate(toks)} for toks in self.slot_tokens]


def slot_token_names(slot_vocab: int) -> list[list[str]]:
    names = [[f"{p}{i:02d}" for i in range(slot_vocab)] for p in SLOT_PREFIX]
    names[3][0] = "None"          # empty modifier slot
    return names


def default_spec(cfg: SynthSection | None = None) -> SyntheticSpec:
    """Self-loop plus two designated successors; each frame prefers
    ``own_tokens`` tokens per slot (Dirichlet-weighted), the rest of the mass
    is spread uniformly over the slot vocabulary."""
    cfg = cfg or SynthSection()
    F, S = cfg.frames, cfg.slot_vocab
    rng = numpy_rng(cfg.seed, "synth-spec")
    offsets = [int(x) for x in cfg.successors.split(",") if x.strip()]
    trans = np.zeros((F, F))
    for k in range(F):
        trans[k, k] += cfg.self_loop
        for off in offsets:
            trans[k, (k + off) % F] += (1 - cfg.self_loop) / len(offsets)
    if F == 1:
        trans[:] = 1.0
    masses = [float(x) for x in cfg.own_mass.split(",")]
    if len(masses) != 4:
        raise ContractViolation("synth.own_mass needs four comma-separated values")
    emis = np.zeros((F, 4, S))
    for k in range(F):
        for s in range(4):
            own = [(k * cfg.own_tokens + j) % S for j in range(cfg.own_tokens)]
            w = rng.dirichlet(np.ones(cfg.own_tokens))
            emis[k, s] = (1 - masses[s]) / S
            np.add.at(emis[k, s], own, masses[s] * w)
            emis[k, s] /= emis[k, s].sum()
    return SyntheticSpec(np.full(F, 1.0 / F), trans, emis, slot_token_names(S),
                         cfg.events, cfg.train, cfg.valid, cfg.test, cfg.seed)


def _categorical(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[..., None] > cdf).sum(-1), cdf.shape[-1] - 1)


def sample_documents(spec: SyntheticSpec, n_docs: int, rng: np.random.Generator,
                     events: int | None = None) -> list[EventDocument]:
    spec.validate()
    M = events or spec.events
    frames = np.empty((n_docs, M), dtype=np.int64)
    frames[:, 0] = _categorical(np.cumsum(spec.initial), rng.random(n_docs))
    tcdf = np.cumsum(spec.transitions, axis=1)
    for m in range(1, M):
        frames[:, m] = _categorical(tcdf[frames[:, m - 1]], rng.random(n_docs))
    ecdf = np.cumsum(spec.emissions, axis=-1)
    u = rng.random((n_docs, M, 4))
    slot = np.arange(4)
    toks = _categorical(ecdf[frames[..., None], slot], u)
    labels = spec.frame_labels
    docs = []
    for d in range(n_docs):
        events = [tuple(spec.slot_tokens[s][toks[d, m, s]] for s in range(4)) for m in range(M)]
        docs.append(EventDocument(events, [labels[f] for f in frames[d]]))
    return docs


def synth_generate(spec: SyntheticSpec, out_dir: str | Path | None = None) -> dict[str, list[EventDocument]]:
    """Train/valid/test splits, each from its own seeded substream."""
    sizes = {"train": spec.n_train, "valid": spec.n_valid, "test": spec.n_test}
    splits = {name: sample_documents(spec, sizes[name], numpy_rng(spec.seed, "synth", i))
              for i, name in enumerate(SPLITS)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, docs in splits.items():
            write_corpus(docs, out / f"{name}.txt")
    return splits


def _emission_logprob(spec: SyntheticSpec, docs: list[EventDocument]) -> np.ndarray:
    """log p(event tokens | frame) for every doc/event/frame: (N, M, F)."""
    index = spec.slot_index()
    M = docs[0].n_events
    ids = np.empty((len(docs), M, 4), dtype=np.int64)
    for d, doc in enumerate(docs):
        if doc.n_events != M:
            raise ContractViolation("oracle needs documents of equal length")
        for m, ev in enumerate(doc.events):
            for s, tok in enumerate(ev):
                if tok not in index[s]:
                    raise ContractViolation(f"token {tok!r} outside the {SLOT_PREFIX[s]} slot support")
                ids[d, m, s] = index[s][tok]
    with np.errstate(divide="ignore"):
        log_e = np.log(spec.emissions)                       # (F, 4, S)
    # (N, M, 4, F) -> sum over slots
    per_slot = log_e[:, np.arange(4)[None, None, :], ids].transpose(1, 2, 3, 0)
    return per_slot.sum(axis=2)


def document_loglik(spec: SyntheticSpec, docs: list[EventDocument]) -> np.ndarray:
    """Exact log p(document) by the forward algorithm, one value per document."""
    if not docs:
        return np.zeros(0)
    emit = _emission_logprob(spec, docs)
    with np.errstate(divide="ignore"):
        log_init = np.log(spec.initial)
        log_trans = np.log(spec.transitions)
    alpha = log_init[None, :] + emit[:, 0]
    for m in range(1, emit.shape[1]):
        alpha = logsumexp(alpha[:, :, None] + log_trans[None], axis=1) + emit[:, m]
    return logsumexp(alpha, axis=1)


def hmm_oracle_ppl(spec: SyntheticSpec, docs: list[EventDocument]) -> float:
    """Per-word perplexity of the true generating model."""
    if not docs:
        raise ContractViolation("empty corpus")
    ll = document_loglik(spec, docs)
    n_tokens = sum(4 * d.n_events for d in docs)
    return float(np.exp(-ll.sum() / n_tokens))
