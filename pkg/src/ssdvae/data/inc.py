"""Inverse narrative cloze (INC) samples.

File format, one sample per line::

    gold_index<TAB>option_0 ||| option_1 ||| ... ||| option_5

where each option is 24 space-separated slot tokens (6 events x 4 slots).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffcore import ContractViolation
from .corpus import EventDocument

log = logging.getLogger(__name__)

N_OPTIONS = 6
N_EVENTS = 6
SEP = " ||| "


@dataclass
class IncSample:
    gold: int
    options: list[list[tuple[str, str, str, str]]]

    def validate(self) -> None:
        if len(self.options) != N_OPTIONS:
            raise ContractViolation(f"INC samples have {N_OPTIONS} options")
        if not 0 <= self.gold < N_OPTIONS:
            raise ContractViolation("gold index out of range")
        first = self.options[0][0]
        for opt in self.options:
            if len(opt) != N_EVENTS:
                raise ContractViolation(f"INC options have {N_EVENTS} events")
            if opt[0] != first:
                raise ContractViolation("INC options must share the first event")

    def documents(self) -> list[EventDocument]:
        return [EventDocument(list(opt), [None] * len(opt)) for opt in self.options]


def build_inc(docs: list[EventDocument], num_samples: int,
              rng: np.random.Generator) -> list[IncSample]:
    """Gold = a real document's first six events; each of the five distractors
    keeps that first event and continues with five events drawn, one at a time,
    from randomly chosen other documents."""
    pool = [d for d in docs if d.n_events >= N_EVENTS]
    if len(pool) < N_OPTIONS:
        raise ContractViolation(
            f"INC construction needs >= {N_OPTIONS} documents with >= {N_EVENTS} events, "
            f"found {len(pool)}")
    samples = []
    for _ in range(num_samples):
        g = int(rng.integers(len(pool)))
        gold = list(pool[g].events[:N_EVENTS])
        options = [gold]
        while len(options) < N_OPTIONS:
            opt = [gold[0]]
            for _ in range(N_EVENTS - 1):
                src = int(rng.integers(len(pool) - 1))
                src += src >= g
                opt.append(pool[src].events[int(rng.integers(pool[src].n_events))])
            if all(opt != o for o in options):
                options.append(opt)
        order = rng.permutation(N_OPTIONS)
        shuffled = [options[i] for i in order]
        samples.append(IncSample(int(np.flatnonzero(order == 0)[0]), shuffled))
    return samples


def serialize_sample(sample: IncSample) -> str:
    opts = SEP.join(" ".join(tok for ev in opt for tok in ev) for opt in sample.options)
    return f"{sample.gold}\t{opts}"


def parse_sample(line: str) -> IncSample:
    gold, sep, rest = line.rstrip("\n").partition("\t")
    if not sep:
        raise ContractViolation("missing TAB after gold index")
    options = []
    for chunk in rest.split(SEP):
        toks = chunk.split(" ")
        if len(toks) != 4 * N_EVENTS:
            raise ContractViolation(f"option has {len(toks)} tokens, expected {4 * N_EVENTS}")
        options.append([tuple(toks[i:i + 4]) for i in range(0, len(toks), 4)])
    try:
        sample = IncSample(int(gold), options)
    except ValueError:
        raise ContractViolation(f"bad gold index {gold!r}") from None
    sample.validate()
    return sample


def write_inc(samples: list[IncSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(serialize_sample(s) + "\n")


def read_inc(path: str | Path) -> tuple[list[IncSample], list[str]]:
    """Parse an INC file; malformed lines are skipped and reported."""
    samples, problems = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(parse_sample(line))
            except ContractViolation as exc:
                msg = f"{path}:{lineno}: {exc}"
                log.warning(msg)
                problems.append(msg)
    return samples, problems
