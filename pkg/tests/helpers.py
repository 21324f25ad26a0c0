"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's own dynamic programming
and feature plumbing: path scores come from explicit enumeration, and
knowledge-base matching re-derives (type, value) pairs straight from the
sentence structure.
"""
from __future__ import annotations

import itertools

import numpy as np

from kcrf.corpus import DependencyArc, Sentence, TagSet, Token
from kcrf.crf import Model
from kcrf.features import FeatureConfig, FeatureVocabulary


def sent(rows, labels=None) -> Sentence:
    """Build a Sentence from (form, pos, head, deprel) rows."""
    tokens = tuple(Token(i, f, p) for i, (f, p, _, _) in enumerate(rows, start=1))
    arcs = tuple(
        DependencyArc(rel, head, i) for i, (_, _, head, rel) in enumerate(rows, start=1)
    )
    return Sentence(tokens, arcs, tuple(labels) if labels is not None else None)


def random_model(rng: np.random.Generator, n_tags: int, n_feats: int,
                 low: float = -3.0, high: float = 3.0) -> Model:
    tagset = TagSet(tuple(f"T{k}" for k in range(n_tags)))
    vocab = FeatureVocabulary(f"f{i}" for i in range(n_feats)).freeze()
    return Model(
        tagset=tagset,
        vocabulary=vocab,
        config=FeatureConfig("basic"),
        state_weights=rng.uniform(low, high, size=(n_feats, n_tags)),
        trans_weights=rng.uniform(low, high, size=(n_tags + 1, n_tags)),
    )


def random_vectors(rng: np.random.Generator, n_feats: int, n_pos: int):
    """Per-position sorted tuples of active ids, occasionally empty."""
    rows = []
    for _ in range(n_pos):
        k = int(rng.integers(0, min(3, n_feats) + 1))
        ids = sorted(rng.choice(n_feats, size=k, replace=False).tolist())
        rows.append(tuple(int(i) for i in ids))
    return tuple(rows)


def emission_matrix(model: Model, x) -> np.ndarray:
    e = np.zeros((len(x), len(model.tagset)))
    for n, ids in enumerate(x):
        for fid in ids:
            e[n] += model.state_weights[fid]
    return e


def enumerate_scores(emissions: np.ndarray, trans: np.ndarray):
    """Scores of every tag path via vectorized exhaustive enumeration."""
    n_pos, n_tags = emissions.shape
    paths = np.array(
        list(itertools.product(range(n_tags), repeat=n_pos)), dtype=np.intp
    )
    scores = emissions[np.arange(n_pos), paths].sum(axis=1)
    scores = scores + trans[n_tags, paths[:, 0]]
    if n_pos > 1:
        scores = scores + trans[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return paths, scores


def brute_marginals(emissions: np.ndarray, trans: np.ndarray):
    """Per-position marginals by summing over all |T|^N paths."""
    n_pos, n_tags = emissions.shape
    paths, scores = enumerate_scores(emissions, trans)
    shift = scores.max()
    weights = np.exp(scores - shift)
    z = weights.sum()
    marginals = np.zeros((n_pos, n_tags))
    for n in range(n_pos):
        for t in range(n_tags):
            marginals[n, t] = weights[paths[:, n] == t].sum() / z
    return marginals, float(np.log(z) + shift)


def brute_best_paths(emissions: np.ndarray, trans: np.ndarray):
    """All argmax paths (usually one for continuous random weights)."""
    paths, scores = enumerate_scores(emissions, trans)
    best = scores.max()
    return [tuple(p) for p, s in zip(paths, scores) if s == best]


def python_path_score(emissions, trans, path) -> float:
    """Scalar path score by plain Python summation (no numpy reductions)."""
    n_tags = len(trans[0])
    score = trans[n_tags][path[0]] + emissions[0][path[0]]
    for i in range(1, len(path)):
        score += trans[path[i - 1]][path[i]] + emissions[i][path[i]]
    return score


def token_has_kv(sentence: Sentence, n: int, ktype: str, value: str) -> bool:
    """Does token ``n`` exhibit (ktype, value)? Re-derived from raw arcs."""
    token = sentence.tokens[n - 1]
    if ktype == "[WORD]":
        return token.form.lower() == value
    role, dep_type, other_pos = ktype[1:-1].split("|")
    for arc in sentence.arcs:
        if role == "GOV" and arc.gov_index == n:
            other = sentence.tokens[arc.dep_index - 1]
        elif role == "DEP" and arc.dep_index == n and arc.gov_index != 0:
            other = sentence.tokens[arc.gov_index - 1]
        else:
            continue
        if (
            arc.dep_type == dep_type
            and other.pos == other_pos
            and other.form.lower() == value
        ):
            return True
    return False


def random_sentence(rng: np.random.Generator, max_len: int = 8) -> Sentence:
    forms = ("This", "stand", "works", "Works", "with", "my", "iPhone", "case", "64GB")
    poses = ("DT", "NN", "VBZ", "IN", "PRP$", "NNP")
    rels = ("det", "nsubj", "nmod:with", "case", "nmod:poss", "dobj")
    n = int(rng.integers(1, max_len + 1))
    tokens = tuple(
        Token(i, str(rng.choice(forms)), str(rng.choice(poses)))
        for i in range(1, n + 1)
    )
    arcs = []
    for dep in range(1, n + 1):
        if rng.random() < 0.8:
            gov = int(rng.integers(0, n + 1))
            if gov == dep:
                gov = 0
            arcs.append(DependencyArc(str(rng.choice(rels)), gov, dep))
    return Sentence(tokens, tuple(arcs))


def random_kb_dict(rng: np.random.Generator, sentence: Sentence, tags=("ENT", "O")):
    """A KB mapping seeded with some of the sentence's own (k, v) pairs plus noise."""
    from kcrf.features import extract_primitive, primitive_to_kv

    pairs = []
    for n in range(1, len(sentence) + 1):
        pairs.extend(primitive_to_kv(p) for p in extract_primitive(sentence, n))
    kb: dict = {}
    for ktype, value in pairs:
        if rng.random() < 0.4:
            tag = str(rng.choice(tags))
            kb.setdefault(tag, {}).setdefault(ktype, set()).add(value)
    for _ in range(int(rng.integers(0, 4))):
        tag = str(rng.choice(tags))
        kb.setdefault(tag, {}).setdefault("[WORD]", set()).add(f"noise{rng.integers(100)}")
    return kb
