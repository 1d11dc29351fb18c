"""Event-document corpus files.

One document per line, two TAB-separated fields::

    Killing Impact - - -<TAB>killed train passengers None collided train train None ...

Field 1 holds M frame labels (``-`` = no frame); field 2 holds 4M slot
tokens in verb/subject/object/modifier order, ``None`` for empty slots.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

SLOTS = ("verb", "subject", "object", "modifier")
NO_FRAME = "-"
MALFORMED_LIMIT = 0.01


class CorpusFormatError(ValueError):
    pass


@dataclass
class EventDocument:
    events: list[tuple[str, str, str, str]]
    frames: list[str | None]

    def __post_init__(self):
        if len(self.events) != len(self.frames):
            raise CorpusFormatError("one frame slot per event required")
        for ev in self.events:
            if len(ev) != 4:
                raise CorpusFormatError("events have exactly 4 slots")

    @property
    def n_events(self) -> int:
        return len(self.events)

    def tokens(self, tup: bool = False) -> list[str]:
        out = []
        for ev in self.events:
            out.extend(ev)
            if tup:
                out.append("<tup>")
        return out


def serialize_document(doc: EventDocument) -> str:
    frames = " ".join(NO_FRAME if f is None else f for f in doc.frames)
    return f"{frames}\t{' '.join(doc.tokens())}"


def parse_line(line: str, known_frames: set[str] | None = None) -> EventDocument:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 2:
        raise CorpusFormatError(f"expected 2 TAB-separated fields, found {len(fields)}")
    labels = fields[0].split(" ")
    tokens = fields[1].split(" ")
    if len(tokens) % 4:
        raise CorpusFormatError(f"token count {len(tokens)} is not a multiple of 4")
    if len(tokens) != 4 * len(labels):
        raise CorpusFormatError(f"{len(labels)} frame labels but {len(tokens)} tokens")
    frames = [None if lab == NO_FRAME else lab for lab in labels]
    if known_frames is not None:
        for lab in frames:
            if lab is not None and lab not in known_frames:
                raise CorpusFormatError(f"unknown frame label {lab!r}")
    events = [tuple(tokens[i:i + 4]) for i in range(0, len(tokens), 4)]
    return EventDocument(events, frames)


@dataclass
class CorpusReader:
    """Streams documents in file order, collecting per-line diagnostics.

    Malformed lines are skipped; once the stream is exhausted, more than 1%
    malformed lines raises CorpusFormatError.
    """
    path: str | Path
    known_frames: set[str] | None = None
    diagnostics: list[str] = field(default_factory=list)
    lines_read: int = 0

    def __iter__(self) -> Iterator[EventDocument]:
        self.diagnostics.clear()
        self.lines_read = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                self.lines_read += 1
                try:
                    doc = parse_line(line, self.known_frames)
                except CorpusFormatError as exc:
                    msg = f"{self.path}:{lineno}: {exc}"
                    log.warning(msg)
                    self.diagnostics.append(msg)
                    continue
                yield doc
        if self.lines_read and len(self.diagnostics) > MALFORMED_LIMIT * self.lines_read:
            raise CorpusFormatError(
                f"{self.path}: {len(self.diagnostics)} of {self.lines_read} lines malformed; "
                f"first: {self.diagnostics[0]}")


def parse_corpus(path: str | Path, known_frames: set[str] | None = None) -> CorpusReader:
    return CorpusReader(path, known_frames)


def read_corpus(path: str | Path, known_frames: set[str] | None = None) -> list[EventDocument]:
    return list(parse_corpus(path, known_frames))


def write_corpus(docs: Iterable[EventDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(serialize_document(doc) + "\n")
