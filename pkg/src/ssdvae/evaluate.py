"""Perplexity, inverse narrative cloze, frame classification and cluster reports.

Every evaluation runs with no frames observed and draws its Gumbel noise from
the ``eval`` substream of the given seed, so repeated calls agree exactly.
"""
from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .baselines import FrameClassifier
from .data.corpus import EventDocument
from .data.inc import IncSample
from .data.vocab import Vocabulary, encode_documents
from .diffcore import DTYPE, ContractViolation
from .gumbel import gumbel_noise
from .model import FrameVAE
from .rng import torch_rng
from .trainer import corpus_nll


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    columns: list[str] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        bad = [k for k, v in self.metrics.items() if not math.isfinite(v)]
        if bad:
            raise ContractViolation(f"non-finite metrics: {bad}")

    def to_text(self) -> str:
        """``name<TAB>value`` per metric; detail rows follow under a header line."""
        lines = [f"{k}\t{v!r}" for k, v in self.metrics.items()]
        if self.rows:
            lines.append("\t".join(self.columns))
            lines.extend("\t".join(str(c) for c in r) for r in self.rows)
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "metrics": self.metrics, "columns": self.columns,
                           "rows": self.rows, "config": self.config, "seed": self.seed},
                          indent=1, sort_keys=True)


def _check_docs(docs):
    if not docs:
        raise ContractViolation("empty corpus")


def perplexity(model: nn.Module, docs: list[EventDocument], vocab: Vocabulary, seed: int = 0,
               samples: int = 1, tup: bool = False) -> float:
    """exp(total NLL / total tokens); no frames observed, one chain per document
    unless ``samples`` > 1 (NLL averaged over chains)."""
    _check_docs(docs)
    nll, count = corpus_nll(model, encode_documents(docs, vocab, tup), seed, samples)
    return math.exp(nll / count)


# ---------------------------------------------------------------- INC

Scorer = Callable[[torch.Tensor, torch.Tensor | None], torch.Tensor]


def model_scorer(model: nn.Module) -> Scorer:
    return lambda toks, noise: model.nll(toks, noise)


@dataclass
class IncResult:
    accuracy: float
    correct: int
    total: int
    ties: int
    skipped: int
    predictions: list[int]


@torch.no_grad()
def inc_accuracy(model: nn.Module | Scorer, samples: Sequence[IncSample], vocab: Vocabulary,
                 seed: int = 0, skipped: int = 0, batch_size: int = 100,
                 n_chains: int = 1) -> IncResult:
    """Pick the option with the lowest mean NLL per token.

    All six options of one sample share the same Gumbel noise, so differences
    between options are not masked by sampling noise. Exact ties go to the
    lower option index and are counted.
    """
    if not samples:
        raise ContractViolation("no INC samples")
    if isinstance(model, nn.Module):
        was_training = model.training
        model.eval()
        scorer, shaper = model_scorer(model), model.noise_shape
    else:
        scorer, shaper, was_training = model, (lambda t: None), None
    gen = torch_rng(seed, "eval")
    preds, correct, ties = [], 0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        toks = torch.tensor([[[vocab.index(t) for ev in opt for t in ev] for opt in s.options]
                             for s in chunk])
        n, k, T = toks.shape
        shape = shaper(toks[:, 0])
        noise = None
        if shape is not None:
            noise = gumbel_noise((n_chains, *shape), gen).unsqueeze(2).expand(
                n_chains, n, k, *shape[1:]).reshape(n_chains, n * k, *shape[1:])
        scores = scorer(toks.reshape(n * k, T), noise).reshape(n, k) / T
        for s, row in zip(chunk, scores):
            best = row.min()
            hit = torch.nonzero(row == best).flatten()
            ties += len(hit) > 1
            p = int(hit[0])
            preds.append(p)
            correct += p == s.gold
    if was_training is not None:
        model.train(was_training)
    return IncResult(correct / len(samples), correct, len(samples), ties, skipped, preds)


# ---------------------------------------------------------------- classification

def classification_metrics(preds: Sequence[int], gold: Sequence[int]) -> dict[str, float]:
    """Accuracy, and precision/F1 macro-averaged over classes present in gold."""
    preds, gold = np.asarray(preds), np.asarray(gold)
    if preds.shape != gold.shape or preds.ndim != 1:
        raise ContractViolation("predictions and gold labels must be equal-length 1-d")
    if len(gold) == 0:
        raise ContractViolation("no labelled examples")
    precisions, f1s = [], []
    for c in np.unique(gold):
        tp = np.sum((preds == c) & (gold == c))
        n_pred, n_gold = np.sum(preds == c), np.sum(gold == c)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold
        precisions.append(p)
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return {"accuracy": float(np.mean(preds == gold)),
            "macro_precision": float(np.mean(precisions)),
            "macro_f1": float(np.mean(f1s))}


@torch.no_grad()
def predict_frames(model: nn.Module, tokens: torch.Tensor) -> torch.Tensor:
    """argmax frame of a single event: softmax(gamma_1) for the VAE, head logits otherwise.
    gamma_1 does not depend on the Gumbel draw (the chain starts from a uniform frame)."""
    was_training = model.training
    model.eval()
    if isinstance(model, FrameVAE):
        noise = torch.zeros(model.noise_shape(tokens), dtype=DTYPE)
        out = model.frame_posteriors(tokens, noise)[..., 0, :].argmax(-1)
    elif isinstance(model, FrameClassifier):
        out = model(tokens).argmax(-1)
    else:
        raise ContractViolation(f"{type(model).__name__} cannot classify frames")
    model.train(was_training)
    return out


def frame_classification(model: nn.Module, docs: list[EventDocument],
                         vocab: Vocabulary) -> dict[str, float]:
    _check_docs(docs)
    if any(d.n_events != 1 for d in docs):
        raise ContractViolation("frame classification takes single-event documents")
    groups = encode_documents(docs, vocab)
    preds, gold = [], []
    for g in groups:
        keep = g.frames[:, 0] >= 0
        if keep.any():
            preds.append(predict_frames(model, g.tokens[keep]))
            gold.append(g.frames[keep, 0])
    if not gold:
        raise ContractViolation("no document carries a known gold frame")
    return classification_metrics(torch.cat(preds).tolist(), torch.cat(gold).tolist())


# ---------------------------------------------------------------- clusters

@dataclass
class ClusterReport:
    token_frames: dict[str, list[tuple[str, float]]]
    frame_tokens: dict[str, list[tuple[str, float]]]

    def to_text(self) -> str:
        out = ["token\ttop frames"]
        for tok, row in self.token_frames.items():
            out.append("\t".join([tok] + [f"{f}:{s:.6g}" for f, s in row]))
        out.append("frame\ttop tokens")
        for fr, row in self.frame_tokens.items():
            out.append("\t".join([fr] + [f"{t}:{s:.6g}" for t, s in row]))
        return "\n".join(out) + "\n"


def top_k(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Descending score, ties toward the lower index."""
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [(int(i), float(scores[i])) for i in order]


def frame_names(vocab: Vocabulary, n_frames: int) -> list[str]:
    return [vocab.frames[k] if k < len(vocab.frames) else f"frame_{k}" for k in range(n_frames)]


@torch.no_grad()
def cluster_report(model: FrameVAE, docs: list[EventDocument], vocab: Vocabulary, k: int = 5,
                   aggregate: str = "mean", seed: int = 0) -> ClusterReport:
    """Aggregate beta_enc columns by token type and beta_dec columns by the
    inferred argmax frame; report top-k frames per token and tokens per frame.
    Tokens and frames never seen in ``docs`` are omitted."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if aggregate not in ("mean", "max"):
        raise ContractViolation("aggregate is 'mean' or 'max'")
    _check_docs(docs)
    was_training = model.training
    model.eval()
    F, V = model.n_frames, len(vocab)
    tok_sum = np.zeros((V, F))
    tok_max = np.full((V, F), -np.inf)
    tok_n = np.zeros(V)
    fr_sum = np.zeros((F, V))
    fr_max = np.full((F, V), -np.inf)
    fr_n = np.zeros(F)
    gen = torch_rng(seed, "eval")
    for g in encode_documents(docs, vocab, model.cfg.tup):
        noise = gumbel_noise(model.noise_shape(g.tokens), gen)
        b_enc, b_dec, frames = model.betas(g.tokens, noise)
        cols = b_enc.transpose(-1, -2).reshape(-1, F).numpy()          # (N*T, F)
        ids = g.tokens.reshape(-1).numpy()
        np.add.at(tok_sum, ids, cols)
        np.maximum.at(tok_max, ids, cols)
        np.add.at(tok_n, ids, 1)
        dcols = b_dec.transpose(-1, -2).reshape(-1, V).numpy()         # (N*M, V)
        fids = frames.reshape(-1).numpy()
        np.add.at(fr_sum, fids, dcols)
        np.maximum.at(fr_max, fids, dcols)
        np.add.at(fr_n, fids, 1)
    model.train(was_training)
    names = frame_names(vocab, F)
    tok_agg = tok_sum / np.maximum(tok_n, 1)[:, None] if aggregate == "mean" else tok_max
    fr_agg = fr_sum / np.maximum(fr_n, 1)[:, None] if aggregate == "mean" else fr_max
    token_frames = {vocab.tokens[v]: [(names[f], s) for f, s in top_k(tok_agg[v], k)]
                    for v in range(V) if tok_n[v]}
    frame_tokens = {names[f]: [(vocab.tokens[v], s) for v, s in top_k(fr_agg[f], k)]
                    for f in range(F) if fr_n[f]}
    return ClusterReport(token_frames, frame_tokens)
