"""Iterative knowledge expansion over unlabeled text.

Each pass re-vectorizes the unlabeled corpus against the current knowledge
base, harvests (type, value) candidates at positions with confident
marginals, prunes pairs proposed for more than one tag in the same pass, and
unions the survivors into the knowledge base. The model itself is never
retrained; only the knowledge base grows, and with it the indicator features
that fire at prediction time.

Candidates are restricted to pairs absent from the current knowledge base:
re-proposing known values every pass would never let the loop's "no new
knowledge" exit fire, and only genuinely new pairs can change anything.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Sentence
from .crf import Model, forward_backward
from .features import extract_primitive, primitive_to_kv, vectorize
from .knowledge import KnowledgeBase

DEFAULT_DELTA_PRIME = 0.8
DEFAULT_MAX_ITERS = 10

#: tag -> set of candidate (knowledge type, value) pairs
CandidateKB = dict[str, set[tuple[str, str]]]


@dataclass(frozen=True)
class IterationStats:
    """Observability record for one expansion pass."""

    iteration: int
    reliable: dict[str, int]
    candidates_raw: dict[str, int]
    candidates_pruned: dict[str, int]
    kb_size: dict[str, int]
    pruned_pairs: dict[str, frozenset[tuple[str, str]]]
    kb_after: KnowledgeBase


@dataclass
class ExpansionTrace:
    iterations: list[IterationStats] = field(default_factory=list)
    capped: bool = False

    def records(self, tags: Sequence[str]) -> list[dict]:
        """Flat per-(iteration, tag) records for line-delimited output."""
        rows = []
        for stats in self.iterations:
            for tag in tags:
                rows.append(
                    {
                        "iteration": stats.iteration,
                        "tag": tag,
                        "reliable_count": stats.reliable.get(tag, 0),
                        "candidates_raw": stats.candidates_raw.get(tag, 0),
                        "candidates_pruned": stats.candidates_pruned.get(tag, 0),
                        "kb_size": stats.kb_size.get(tag, 0),
                    }
                )
        return rows

    def write_jsonl(self, path: str | Path, tags: Sequence[str]) -> None:
        lines = [json.dumps(r, ensure_ascii=False) for r in self.records(tags)]
        if self.capped:
            lines.append(
                json.dumps({"warning": "iteration cap reached with candidates pending"})
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def reliable_positions(
    model: Model,
    kb: KnowledgeBase,
    sentence: Sentence,
    delta_prime: float = DEFAULT_DELTA_PRIME,
) -> list[tuple[int, str]]:
    """(position, tag) pairs whose marginal strictly exceeds ``delta_prime``.

    The sentence is vectorized against the current knowledge base, so what
    counts as reliable shifts as the knowledge base grows.
    """
    x = vectorize(sentence, model.vocabulary, kb, model.config)
    table = forward_backward(model, x)
    out = []
    for n, row in enumerate(table.probs, start=1):
        best = int(np.argmax(row))
        if row[best] > delta_prime:
            out.append((n, model.tagset.tags[best]))
    return out


def collect_candidates(
    sentence: Sentence,
    reliable: Sequence[tuple[int, str]],
    knowledge_types: Mapping[str, frozenset[str]],
    kb: KnowledgeBase,
) -> CandidateKB:
    """Harvest new (type, value) pairs at reliable positions.

    For a position reliably tagged ``t``, every primitive feature of the
    token whose knowledge type belongs to ``t``'s selected types contributes
    its value -- unless that (type, value) pair is already known for ``t``.
    """
    candidates: CandidateKB = {}
    for n, tag in reliable:
        ktypes = knowledge_types.get(tag)
        if not ktypes:
            continue
        for primitive in extract_primitive(sentence, n):
            ktype, value = primitive_to_kv(primitive)
            if ktype in ktypes and not kb.contains(tag, ktype, value):
                candidates.setdefault(tag, set()).add((ktype, value))
    return candidates


def prune(candidates: CandidateKB) -> CandidateKB:
    """Drop every (type, value) pair proposed for two or more tags.

    A pair that looks like knowledge for multiple tags in the same pass is
    not reliable for any of them; the surviving per-tag sets are pairwise
    disjoint.
    """
    seen: dict[tuple[str, str], int] = {}
    for pairs in candidates.values():
        for pair in pairs:
            seen[pair] = seen.get(pair, 0) + 1
    shared = {pair for pair, count in seen.items() if count > 1}
    pruned = {tag: pairs - shared for tag, pairs in candidates.items()}
    return {tag: pairs for tag, pairs in pruned.items() if pairs}


def expand(
    model: Model,
    kb0: KnowledgeBase,
    unlabeled: Sequence[Sentence],
    delta_prime: float = DEFAULT_DELTA_PRIME,
    max_iters: int = DEFAULT_MAX_ITERS,
    strict: bool = False,
) -> tuple[KnowledgeBase, ExpansionTrace]:
    """Run the expansion loop until no new knowledge survives pruning.

    Returns a grown copy of ``kb0`` and a per-iteration trace; ``kb0`` and
    the model are left untouched. ``strict`` additionally discards
    candidates already present under any other tag's accumulated knowledge
    (the literal algorithm only prunes within one pass). Hitting
    ``max_iters`` with candidates still pending is recorded as a warning on
    the trace, not an error.
    """
    if not 0 < delta_prime <= 1:
        raise ValueError(f"delta_prime must be in (0, 1], got {delta_prime}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    tags = model.tagset.tags
    kb = kb0.copy()
    knowledge_types = {tag: frozenset(kb0.types(tag)) for tag in tags}
    trace = ExpansionTrace()
    for iteration in range(1, max_iters + 1):
        reliable_counts = {tag: 0 for tag in tags}
        merged: CandidateKB = {}
        for sentence in unlabeled:
            reliable = reliable_positions(model, kb, sentence, delta_prime)
            for _, tag in reliable:
                reliable_counts[tag] += 1
            for tag, pairs in collect_candidates(
                sentence, reliable, knowledge_types, kb
            ).items():
                merged.setdefault(tag, set()).update(pairs)
        raw_counts = {tag: len(merged.get(tag, ())) for tag in tags}
        surviving = prune(merged)
        if strict:
            surviving = {
                tag: {
                    (k, v)
                    for k, v in pairs
                    if not any(kb.contains(other, k, v) for other in tags if other != tag)
                }
                for tag, pairs in surviving.items()
            }
            surviving = {tag: pairs for tag, pairs in surviving.items() if pairs}
        for tag in tags:
            for ktype, value in sorted(surviving.get(tag, ())):
                kb.add(tag, ktype, value)
        trace.iterations.append(
            IterationStats(
                iteration=iteration,
                reliable=reliable_counts,
                candidates_raw=raw_counts,
                candidates_pruned={tag: len(surviving.get(tag, ())) for tag in tags},
                kb_size={tag: kb.total(tag) for tag in tags},
                pruned_pairs={
                    tag: frozenset(surviving.get(tag, ())) for tag in tags
                },
                kb_after=kb.copy(),
            )
        )
        if not surviving:
            break
    else:
        trace.capped = True
    return kb, trace
