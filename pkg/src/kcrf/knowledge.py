"""Knowledge base and entropy-based knowledge-type selection.

A knowledge base holds, per output tag, sets of (knowledge type, value)
pairs. Types and initial values are mined from a trained primitive-preset
model: a feature whose weight row concentrates probability mass on one tag
(low entropy, unique argmax) is salient, and its (type, value) reading seeds
that tag's knowledge.
"""
from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .crf import Model
from .features import parse_primitive_string

KB_VERSION = 1
DEFAULT_DELTA = 0.3

PRIMITIVE_PREFIX = "PRIM:"


def tag_distribution(weights: Sequence[float] | np.ndarray) -> np.ndarray:
    """Softmax over one feature's per-tag weights (shift-invariant, stable)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 2:
        raise ValueError(f"expected a vector of >= 2 weights, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    z = np.exp(w - w.max())
    return z / z.sum()


def feature_entropy(probabilities: Sequence[float] | np.ndarray) -> float:
    """Entropy in nats of a tag distribution, with 0*log(0) taken as 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    nonzero = p[p > 0.0]
    return float(-(nonzero * np.log(nonzero)).sum())


class KnowledgeBase(Mapping):
    """Per-tag map from knowledge type to a set of (lowercased) values.

    Behaves as a read-only mapping tag -> {type -> set(values)}; use
    :meth:`add` to grow a private copy. Equality and the on-disk form are
    defined by the canonical sorted payload.
    """

    def __init__(self, data: Optional[Mapping] = None):
        self._per_tag: dict[str, dict[str, set[str]]] = {}
        if data:
            for tag, per_type in data.items():
                for ktype, values in per_type.items():
                    for value in values:
                        self.add(tag, ktype, value)

    def __getitem__(self, tag: str) -> dict[str, set[str]]:
        return self._per_tag[tag]

    def __iter__(self) -> Iterator[str]:
        return iter(self._per_tag)

    def __len__(self) -> int:
        return len(self._per_tag)

    def __repr__(self) -> str:
        sizes = {tag: self.total(tag) for tag in sorted(self._per_tag)}
        return f"KnowledgeBase({sizes})"

    def add(self, tag: str, ktype: str, value: str) -> bool:
        """Insert one (type, value) pair under ``tag``; True if it was new."""
        if not (tag and ktype and value):
            raise ValueError("tag, knowledge type, and value must be non-empty")
        values = self._per_tag.setdefault(tag, {}).setdefault(ktype, set())
        if value in values:
            return False
        values.add(value)
        return True

    def contains(self, tag: str, ktype: str, value: str) -> bool:
        return value in self._per_tag.get(tag, {}).get(ktype, ())

    def types(self, tag: str) -> tuple[str, ...]:
        return tuple(sorted(self._per_tag.get(tag, ())))

    def values(self, tag: str, ktype: str) -> frozenset[str]:
        return frozenset(self._per_tag.get(tag, {}).get(ktype, ()))

    def total(self, tag: Optional[str] = None) -> int:
        """Number of (type, value) pairs, overall or for one tag."""
        tags = [tag] if tag is not None else list(self._per_tag)
        return sum(
            len(values)
            for t in tags
            for values in self._per_tag.get(t, {}).values()
        )

    def entries(self) -> list[tuple[str, str, str]]:
        """All (tag, type, value) triples, sorted."""
        return sorted(
            (tag, ktype, value)
            for tag, per_type in self._per_tag.items()
            for ktype, values in per_type.items()
            for value in values
        )

    def copy(self) -> "KnowledgeBase":
        return KnowledgeBase(self._per_tag)

    def to_payload(self) -> dict:
        return {
            "version": KB_VERSION,
            "tags": {
                tag: {
                    ktype: sorted(values)
                    for ktype, values in sorted(self._per_tag[tag].items())
                }
                for tag in sorted(self._per_tag)
            },
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.to_payload() == other.to_payload()


def kb_to_bytes(kb: KnowledgeBase) -> bytes:
    """Canonical UTF-8 JSON (sorted tags, types, and values)."""
    return (
        json.dumps(kb.to_payload(), ensure_ascii=False, sort_keys=True, indent=2)
        + "\n"
    ).encode("utf-8")


def kb_from_bytes(data: bytes) -> KnowledgeBase:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable knowledge-base file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != KB_VERSION:
        raise ValueError(
            f"unsupported knowledge-base version {payload.get('version') if isinstance(payload, dict) else payload!r}"
        )
    tags = payload.get("tags")
    if not isinstance(tags, dict):
        raise ValueError("knowledge-base file: 'tags' must be an object")
    kb = KnowledgeBase()
    for tag, per_type in tags.items():
        if not isinstance(per_type, dict):
            raise ValueError(f"knowledge-base file: tags.{tag} must be an object")
        for ktype, values in per_type.items():
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise ValueError(
                    f"knowledge-base file: tags.{tag}.{ktype} must be a list of strings"
                )
            for value in values:
                kb.add(tag, ktype, value)
    return kb


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    Path(path).write_bytes(kb_to_bytes(kb))


def load_kb(path: str | Path) -> KnowledgeBase:
    return kb_from_bytes(Path(path).read_bytes())


def kb_diff(a: KnowledgeBase, b: KnowledgeBase) -> list[tuple[str, str, str]]:
    """Sorted (tag, type, value) triples present in ``b`` but not in ``a``."""
    return sorted(set(b.entries()) - set(a.entries()))


@dataclass(frozen=True)
class SelectionEntry:
    """One primitive feature's selection record."""

    feature_id: int
    feature: str
    probabilities: tuple[float, ...]
    entropy: float
    selected: bool
    winning_tag: Optional[str]


@dataclass(frozen=True)
class SelectionReport:
    delta: float
    max_entropy: float
    entries: tuple[SelectionEntry, ...]

    def summary(self, tagset: Sequence[str]) -> str:
        """Human-readable report, lowest entropy first."""
        lines = [
            f"knowledge-type selection: delta={self.delta} "
            f"(max entropy for {len(tagset)} tags: {self.max_entropy:.4f} nats)",
            f"candidates: {len(self.entries)}, "
            f"selected: {sum(e.selected for e in self.entries)}",
            "",
        ]
        header = "selected  entropy   winner  " + "  ".join(
            f"p({t})" for t in tagset
        )
        lines.append(header)
        for e in sorted(self.entries, key=lambda e: (e.entropy, e.feature)):
            probs = "  ".join(f"{p:.4f}" for p in e.probabilities)
            mark = "*" if e.selected else " "
            winner = e.winning_tag or "-"
            lines.append(f"   {mark}      {e.entropy:.4f}   {winner:<6}  {probs}  {e.feature}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SelectionResult:
    """Selected primitive features (R) and knowledge types (K), per tag."""

    feature_ids: dict[str, frozenset[int]]
    knowledge_types: dict[str, frozenset[str]]
    report: SelectionReport


def select_knowledge_types(model: Model, delta: float = DEFAULT_DELTA) -> SelectionResult:
    """Pick salient primitive features from a trained model's weights.

    A primitive feature lands in tag ``t``'s set when its softmaxed weight
    row has entropy below ``delta`` and ``t`` uniquely attains the maximum
    probability; exact argmax ties disqualify. Only primitive-family
    features are eligible, and all-zero weight rows (never updated) are
    skipped as uninformative.
    """
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if model.config.preset != "primitive":
        raise ValueError(
            f"knowledge selection needs a model trained with the 'primitive' "
            f"preset, got {model.config.preset!r}"
        )
    tags = model.tagset.tags
    feature_ids: dict[str, set[int]] = {t: set() for t in tags}
    knowledge_types: dict[str, set[str]] = {t: set() for t in tags}
    entries = []
    for fid, feature in enumerate(model.vocabulary.strings):
        if not feature.startswith(PRIMITIVE_PREFIX):
            continue
        row = model.state_weights[fid]
        if not row.any():
            continue
        probs = tag_distribution(row)
        entropy = feature_entropy(probs)
        winners = np.flatnonzero(probs == probs.max())
        unique = winners.size == 1
        selected = bool(entropy < delta and unique)
        winning_tag = tags[int(winners[0])] if unique else None
        entries.append(
            SelectionEntry(
                feature_id=fid,
                feature=feature,
                probabilities=tuple(float(p) for p in probs),
                entropy=entropy,
                selected=selected,
                winning_tag=winning_tag,
            )
        )
        if selected:
            ktype, _ = parse_primitive_string(feature)
            feature_ids[winning_tag].add(fid)
            knowledge_types[winning_tag].add(ktype)
    report = SelectionReport(
        delta=delta,
        max_entropy=math.log(len(tags)),
        entries=tuple(entries),
    )
    return SelectionResult(
        feature_ids={t: frozenset(feature_ids[t]) for t in tags},
        knowledge_types={t: frozenset(knowledge_types[t]) for t in tags},
        report=report,
    )


def build_initial_kb(model: Model, selection: SelectionResult) -> KnowledgeBase:
    """Seed a knowledge base from the selected features' (type, value) pairs.

    Values come from the training data by construction: each selected
    feature string was interned while extracting the training corpus.
    """
    strings = model.vocabulary.strings
    kb = KnowledgeBase()
    for tag in model.tagset.tags:
        for fid in sorted(selection.feature_ids.get(tag, ())):
            ktype, value = parse_primitive_string(strings[fid])
            kb.add(tag, ktype, value)
    return kb
