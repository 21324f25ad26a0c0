"""Corpus ingestion and in-memory sentence representation.

Sentences arrive as dependency-parsed, POS-tagged TSV (one token per line,
tab-separated columns INDEX, FORM, POS, HEAD, DEPREL, LABEL; a blank line
ends a sentence; ``#`` starts a comment; LABEL is a tag or ``_``) and are
held as immutable value objects. No tokenization, tagging, or parsing
happens here; parses are consumed as given.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO

GOV = "GOV"
DEP = "DEP"
UNLABELED_MARK = "_"

#: characters that would make persisted feature strings ambiguous
_RESERVED_IN_POS_DEPREL = ("|", "=")


class CorpusError(ValueError):
    """Malformed corpus input; the message names the offending line."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Token:
    """One token: 1-based position, surface form, and POS tag."""

    index: int
    form: str
    pos: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if not self.form:
            raise ValueError("token form must be non-empty")
        if not self.pos:
            raise ValueError("token POS must be non-empty")


@dataclass(frozen=True)
class DependencyArc:
    """Typed arc from governor to dependent; governor 0 is the artificial root."""

    dep_type: str
    gov_index: int
    dep_index: int

    def __post_init__(self):
        if not self.dep_type:
            raise ValueError("dependency type must be non-empty")
        if self.dep_index < 1:
            raise ValueError(f"dependent index must be >= 1, got {self.dep_index}")
        if self.gov_index < 0:
            raise ValueError(f"governor index must be >= 0, got {self.gov_index}")
        if self.gov_index == self.dep_index:
            raise ValueError(f"self-loop arc at index {self.dep_index}")


@dataclass(frozen=True)
class TagSet:
    """Ordered, distinct output tags; the order breaks ties deterministically."""

    tags: tuple[str, ...] = ("ENT", "O")

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tags) < 2:
            raise ValueError("a tag set needs at least two tags")
        if len(set(self.tags)) != len(self.tags):
            raise ValueError(f"duplicate tags in {self.tags}")
        if any(not t for t in self.tags):
            raise ValueError("tags must be non-empty strings")

    def __len__(self) -> int:
        return len(self.tags)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.tags

    def index(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise ValueError(f"unknown tag {tag!r}, expected one of {self.tags}") from None


DEFAULT_TAGSET = TagSet()


@dataclass(frozen=True)
class Sentence:
    """An immutable parsed sentence, optionally labeled per token."""

    tokens: tuple[Token, ...]
    arcs: tuple[DependencyArc, ...] = ()
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "arcs", tuple(self.arcs))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        n = len(self.tokens)
        for expected, token in enumerate(self.tokens, start=1):
            if token.index != expected:
                raise ValueError(
                    f"token indices must be contiguous from 1; "
                    f"position {expected} holds index {token.index}"
                )
        for arc in self.arcs:
            if arc.dep_index > n or arc.gov_index > n:
                raise ValueError(f"arc {arc} points outside the sentence (N={n})")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError(
                f"got {len(self.labels)} labels for {n} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def token(self, n: int) -> Token:
        """Return the token at 1-based position ``n``."""
        if not 1 <= n <= len(self.tokens):
            raise IndexError(f"position {n} out of range 1..{len(self.tokens)}")
        return self.tokens[n - 1]


def dependency_view(sentence: Sentence, n: int) -> list[tuple[str, str, str, str]]:
    """Per-token view of the arcs touching position ``n``.

    Returns one ``(role, dep_type, other_form, other_pos)`` entry per arc,
    role "GOV" when ``n`` is the governor, "DEP" when it is the dependent.
    Arcs attached to the artificial root yield no entry for the dependent:
    there is no other word.
    """
    if not 1 <= n <= len(sentence):
        raise IndexError(f"position {n} out of range 1..{len(sentence)}")
    view = []
    for arc in sentence.arcs:
        if arc.gov_index == n:
            other = sentence.tokens[arc.dep_index - 1]
            view.append((GOV, arc.dep_type, other.form, other.pos))
        elif arc.dep_index == n and arc.gov_index != 0:
            other = sentence.tokens[arc.gov_index - 1]
            view.append((DEP, arc.dep_type, other.form, other.pos))
    return view


def _build_sentence(
    rows: list[tuple[int, list[str]]],
    tagset: TagSet,
    expect_labels: bool,
) -> Sentence:
    """Validate one TSV block and turn it into a Sentence."""
    n = len(rows)
    tokens = []
    arcs = []
    labels: list[str] = []
    saw_label = saw_unlabeled = False
    for expected, (line_no, cols) in enumerate(rows, start=1):
        index_s, form, pos, head_s, deprel, label = cols
        try:
            index = int(index_s)
        except ValueError:
            raise CorpusError(f"INDEX is not an integer: {index_s!r}", line_no)
        if index != expected:
            raise CorpusError(
                f"non-contiguous token index {index} (expected {expected})", line_no
            )
        if not form:
            raise CorpusError("empty FORM column", line_no)
        if not pos:
            raise CorpusError("empty POS column", line_no)
        for field_name, value in (("POS", pos), ("DEPREL", deprel)):
            for ch in _RESERVED_IN_POS_DEPREL:
                if ch in value:
                    raise CorpusError(
                        f"{field_name} {value!r} contains reserved character {ch!r}",
                        line_no,
                    )
        try:
            head = int(head_s)
        except ValueError:
            raise CorpusError(f"HEAD is not an integer: {head_s!r}", line_no)
        if head < 0 or head > n:
            raise CorpusError(f"HEAD {head} out of range 0..{n}", line_no)
        if head == index:
            raise CorpusError(f"token {index} is its own head", line_no)
        if not deprel:
            raise CorpusError("empty DEPREL column", line_no)
        tokens.append(Token(index, form, pos))
        arcs.append(DependencyArc(deprel, head, index))
        if expect_labels:
            if label == UNLABELED_MARK:
                saw_unlabeled = True
            else:
                if label not in tagset:
                    raise CorpusError(
                        f"unknown label {label!r}, expected one of {tagset.tags} or '_'",
                        line_no,
                    )
                saw_label = True
                labels.append(label)
    if expect_labels and saw_label and saw_unlabeled:
        raise CorpusError(
            "sentence mixes labeled and unlabeled tokens", rows[0][0]
        )
    sentence_labels = tuple(labels) if (expect_labels and saw_label) else None
    return Sentence(tuple(tokens), tuple(arcs), sentence_labels)


def parse_corpus(
    stream: TextIO | str,
    tagset: TagSet = DEFAULT_TAGSET,
    expect_labels: bool = False,
) -> list[Sentence]:
    """Parse corpus TSV into sentences.

    ``expect_labels`` controls whether the LABEL column is read: labels are
    attached only when requested and the sentence carries real tags (not
    ``_``). Raises :class:`CorpusError` naming the line for malformed rows,
    bad indices, heads out of range, or unknown labels.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    sentences = []
    rows: list[tuple[int, list[str]]] = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if line.startswith("#"):
            continue
        if not line.strip():
            if rows:
                sentences.append(_build_sentence(rows, tagset, expect_labels))
                rows = []
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise CorpusError(
                f"expected 6 tab-separated columns, got {len(cols)}", line_no
            )
        rows.append((line_no, cols))
    if rows:
        sentences.append(_build_sentence(rows, tagset, expect_labels))
    return sentences


def serialize_corpus(sentences: Iterable[Sentence]) -> str:
    """Render sentences back to corpus TSV (inverse of :func:`parse_corpus`).

    Requires each token to be the dependent of exactly one arc (the form the
    parser produces); hand-built sentences that violate this cannot be
    written losslessly and raise ``ValueError``.
    """
    blocks = []
    for i, sentence in enumerate(sentences):
        head_of: dict[int, DependencyArc] = {}
        for arc in sentence.arcs:
            if arc.dep_index in head_of:
                raise ValueError(
                    f"sentence {i}: token {arc.dep_index} has multiple heads; "
                    "cannot serialize to single-head TSV"
                )
            head_of[arc.dep_index] = arc
        lines = []
        for token in sentence.tokens:
            arc = head_of.get(token.index)
            if arc is None:
                raise ValueError(
                    f"sentence {i}: token {token.index} has no head arc; "
                    "cannot serialize to single-head TSV"
                )
            label = (
                sentence.labels[token.index - 1]
                if sentence.labels is not None
                else UNLABELED_MARK
            )
            lines.append(
                "\t".join(
                    (
                        str(token.index),
                        token.form,
                        token.pos,
                        str(arc.gov_index),
                        arc.dep_type,
                        label,
                    )
                )
            )
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def load_corpus(
    path: str | Path,
    tagset: TagSet = DEFAULT_TAGSET,
    expect_labels: bool = False,
) -> list[Sentence]:
    with open(path, encoding="utf-8") as handle:
        return parse_corpus(handle, tagset, expect_labels)


def save_corpus(sentences: Sequence[Sentence], path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(sentences), encoding="utf-8")
