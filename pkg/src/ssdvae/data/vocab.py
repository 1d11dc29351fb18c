from __future__ import annotations

from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
import torch

from ..diffcore import ContractViolation
from .corpus import EventDocument

UNK = "<unk>"
BOS = "<s>"
NONE = "None"
TUP = "<tup>"
RESERVED = (UNK, BOS, NONE, TUP)


@dataclass
class Vocabulary:
    tokens: list[str]
    frames: list[str]
    _index: dict[str, int] = field(init=False, repr=False)
    _frame_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ContractViolation("reserved tokens must lead the vocabulary")
        self._index = {t: i for i, t in enumerate(self.tokens)}
        self._frame_index = {f: i for i, f in enumerate(self.frames)}
        if len(self._index) != len(self.tokens) or len(self._frame_index) != len(self.frames):
            raise ContractViolation("vocabulary entries must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def unk(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def index_of(self) -> dict[str, int]:
        return self._index

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def frame_index(self, label: str | None) -> int:
        """Frame id, or -1 for an absent or out-of-inventory label."""
        if label is None:
            return -1
        return self._frame_index.get(label, -1)

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "frames": self.frames}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["tokens"]), list(d["frames"]))


def _top(counter: Counter, limit: int) -> list[str]:
    # frequency descending, ties lexicographic
    return [t for t, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:max(limit, 0)]]


def build_vocab(docs: Iterable[EventDocument], max_size: int,
                max_frames: int | None = None) -> Vocabulary:
    """Top (max_size - 4) tokens by frequency plus the reserved entries."""
    if max_size <= len(RESERVED):
        raise ContractViolation(f"vocabulary size must exceed {len(RESERVED)}")
    tok_counts: Counter = Counter()
    frame_counts: Counter = Counter()
    for doc in docs:
        for ev in doc.events:
            tok_counts.update(t for t in ev if t not in RESERVED)
        frame_counts.update(f for f in doc.frames if f is not None)
    tokens = list(RESERVED) + _top(tok_counts, max_size - len(RESERVED))
    frames = _top(frame_counts, len(frame_counts) if max_frames is None else max_frames)
    return Vocabulary(tokens, frames)


@dataclass
class EncodedGroup:
    """Documents with the same number of events, as index tensors."""
    tokens: torch.Tensor        # (N, T) long
    frames: torch.Tensor        # (N, M) long, -1 = no frame
    positions: np.ndarray       # original document order

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_events(self) -> int:
        return self.frames.shape[1]


def encode_documents(docs: list[EventDocument], vocab: Vocabulary,
                     tup: bool = False) -> list[EncodedGroup]:
    by_len: dict[int, list[int]] = {}
    for i, doc in enumerate(docs):
        by_len.setdefault(doc.n_events, []).append(i)
    groups = []
    for m in sorted(by_len):
        idx = by_len[m]
        toks = [[vocab.index(t) for t in docs[i].tokens(tup)] for i in idx]
        frames = [[vocab.frame_index(f) for f in docs[i].frames] for i in idx]
        groups.append(EncodedGroup(torch.tensor(toks, dtype=torch.long),
                                   torch.tensor(frames, dtype=torch.long).reshape(len(idx), m),
                                   np.asarray(idx)))
    return groups


def mask_frames(frames, epsilon: float, rng: np.random.Generator,
                uniforms: np.ndarray | None = None) -> np.ndarray:
    """Keep each gold frame with probability epsilon; -1 marks I_m = 0.

    Events without a gold frame are never observed. Passing shared
    ``uniforms`` couples masks across epsilon values.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation("epsilon must lie in [0, 1]")
    frames = np.asarray(frames)
    u = rng.random(frames.shape) if uniforms is None else uniforms
    return np.where((u < epsilon) & (frames >= 0), frames, -1)
