"""Feature extraction and the interned feature vocabulary.

Three feature families, all binary:

* basic    -- context-window and word-shape features
* primitive -- current-word and per-token dependency features, the pool
               knowledge is mined from
* knowledge -- indicators that a token exhibits some (type, value) pair
               currently in the knowledge base; the only channel through
               which knowledge-base growth changes predictions

Canonical feature-string grammar (what vocabulary dumps contain)::

    W0=<form>   W[-2]=<form>   P[+1]=<pos>   DIGITS=<n>   SLASHDASH
    PRIM:WORD=<value>          PRIM:DEP|nmod:with|VBZ=<value>
    KB:ENT:[WORD]              KB:ENT:[DEP|nmod:with|VBZ]

Word forms are lowercased for primitive features and knowledge values;
POS tags and dependency types are kept verbatim.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Iterable, Mapping, NamedTuple, Optional, Sequence, Union

from .corpus import Sentence, dependency_view

WINDOW = 4
LEFT_BOUNDARY = "__BOS__"
RIGHT_BOUNDARY = "__EOS__"

WORD_TYPE = "[WORD]"
PRESETS = ("basic", "primitive", "knowledge")
KB_MATCH_MODES = ("per_tag", "flat")
FLAT_TAG = "*"

#: sentence -> per-position sorted tuples of active feature ids
FeatureVectorSeq = tuple[tuple[int, ...], ...]

#: tag -> knowledge type -> set of value strings (the knowledge-base shape)
KBMapping = Mapping[str, Mapping[str, AbstractSet[str]]]


class CurrentWord(NamedTuple):
    """Primitive feature: the (lowercased) token form itself."""

    form: str


class DependencyFeature(NamedTuple):
    """Primitive feature: one arc seen from the token.

    ``role`` is "GOV" or "DEP" for the token's side of the arc; the other
    word's form is lowercased, its POS kept verbatim.
    """

    role: str
    dep_type: str
    other_form: str
    other_pos: str


PrimitiveFeature = Union[CurrentWord, DependencyFeature]


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature families are active and how the KB is matched.

    Presets: ``basic`` is the window/word-shape set alone; ``primitive``
    adds raw current-word and dependency primitives (the pre-training
    learner); ``knowledge`` replaces the raw primitives with per-tag
    knowledge-base indicators on top of the basic set.
    """

    preset: str = "primitive"
    kb_match: str = "per_tag"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, expected one of {PRESETS}")
        if self.kb_match not in KB_MATCH_MODES:
            raise ValueError(
                f"unknown kb_match {self.kb_match!r}, expected one of {KB_MATCH_MODES}"
            )

    @property
    def use_primitive(self) -> bool:
        return self.preset == "primitive"

    @property
    def use_knowledge(self) -> bool:
        return self.preset == "knowledge"


def dep_pattern(role: str, dep_type: str, other_pos: str) -> str:
    """Canonical knowledge-type string for a dependency pattern."""
    return f"[{role}|{dep_type}|{other_pos}]"


def primitive_to_kv(primitive: PrimitiveFeature) -> tuple[str, str]:
    """Map a primitive feature to its (knowledge type, knowledge value) pair.

    A current-word primitive generalizes to the [WORD] type with the word as
    value; a dependency primitive generalizes to its [role|type|pos] pattern
    with the other word as value.
    """
    if isinstance(primitive, CurrentWord):
        return WORD_TYPE, primitive.form
    return dep_pattern(primitive.role, primitive.dep_type, primitive.other_pos), (
        primitive.other_form
    )


def primitive_string(primitive: PrimitiveFeature) -> str:
    ktype, value = primitive_to_kv(primitive)
    return f"PRIM:{ktype[1:-1]}={value}"


def parse_primitive_string(feature: str) -> tuple[str, str]:
    """Recover the (knowledge type, value) pair from a PRIM: feature string."""
    if not feature.startswith("PRIM:"):
        raise ValueError(f"not a primitive feature string: {feature!r}")
    key, sep, value = feature[len("PRIM:"):].partition("=")
    if not sep or not key:
        raise ValueError(f"malformed primitive feature string: {feature!r}")
    return f"[{key}]", value


def kb_feature_string(tag: str, ktype: str) -> str:
    return f"KB:{tag}:{ktype}"


def _offset_key(prefix: str, offset: int) -> str:
    return f"{prefix}0" if offset == 0 else f"{prefix}[{offset:+d}]"


def extract_basic(sentence: Sentence, n: int) -> list[str]:
    """Window and word-shape feature strings for position ``n``.

    Covers the current word and POS, words and POS tags up to 4 positions
    left and right (out-of-sentence slots get boundary markers), the digit
    count, and a slash/dash flag. Pure and deterministic.
    """
    size = len(sentence)
    if not 1 <= n <= size:
        raise IndexError(f"position {n} out of range 1..{size}")
    feats = []
    for offset in range(-WINDOW, WINDOW + 1):
        pos = n + offset
        if pos < 1:
            form = tag = LEFT_BOUNDARY
        elif pos > size:
            form = tag = RIGHT_BOUNDARY
        else:
            token = sentence.tokens[pos - 1]
            form, tag = token.form, token.pos
        feats.append(f"{_offset_key('W', offset)}={form}")
        feats.append(f"{_offset_key('P', offset)}={tag}")
    current = sentence.tokens[n - 1].form
    feats.append(f"DIGITS={sum(c.isdigit() for c in current)}")
    if "/" in current or "-" in current:
        feats.append("SLASHDASH")
    return feats


def extract_primitive(sentence: Sentence, n: int) -> list[PrimitiveFeature]:
    """Primitive features for position ``n``: the current word plus one
    dependency feature per arc touching the token (duplicates collapsed,
    first occurrence kept)."""
    token = sentence.token(n)
    feats: dict[PrimitiveFeature, None] = {CurrentWord(token.form.lower()): None}
    for role, dep_type, other_form, other_pos in dependency_view(sentence, n):
        feats.setdefault(
            DependencyFeature(role, dep_type, other_form.lower(), other_pos), None
        )
    return list(feats)


def knowledge_features(
    sentence: Sentence,
    n: int,
    kb: KBMapping,
    match: str = "per_tag",
) -> list[tuple[str, str]]:
    """(tag, knowledge type) indicators firing at position ``n``.

    ``(t, k)`` fires iff some primitive feature of the token maps to a pair
    ``(k, v)`` with ``v`` in the knowledge base of tag ``t`` under type
    ``k``. In ``flat`` match mode the per-tag partition is ignored and hits
    are reported under the pseudo-tag ``*``.
    """
    pairs = [primitive_to_kv(p) for p in extract_primitive(sentence, n)]
    fired = set()
    for tag in kb:
        per_type = kb[tag]
        for ktype, value in pairs:
            values = per_type.get(ktype)
            if values and value in values:
                fired.add((FLAT_TAG, ktype) if match == "flat" else (tag, ktype))
    return sorted(fired)


class FeatureVocabulary:
    """Interns feature strings to dense contiguous ids.

    Grows only during the build phase; once frozen, lookups of unseen
    strings report absence instead of growing, so test-time activations of
    unknown features are silently dropped.
    """

    def __init__(self, strings: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self._frozen = False
        for s in strings:
            self.add(s)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, feature: str) -> bool:
        return feature in self._index

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def strings(self) -> list[str]:
        """All feature strings in id order."""
        return list(self._index)

    def add(self, feature: str) -> int:
        if self._frozen:
            raise RuntimeError("vocabulary is frozen")
        if not feature:
            raise ValueError("empty feature string")
        return self._index.setdefault(feature, len(self._index))

    def freeze(self) -> "FeatureVocabulary":
        self._frozen = True
        return self

    def get(self, feature: str) -> Optional[int]:
        return self._index.get(feature)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureVocabulary) and self._index == other._index
        )


def position_features(
    sentence: Sentence,
    n: int,
    config: FeatureConfig,
    kb: Optional[KBMapping] = None,
) -> list[str]:
    """All configured feature strings for one position, deterministic order."""
    feats = extract_basic(sentence, n)
    if config.use_primitive:
        feats.extend(primitive_string(p) for p in extract_primitive(sentence, n))
    if config.use_knowledge and kb:
        feats.extend(
            kb_feature_string(tag, ktype)
            for tag, ktype in knowledge_features(sentence, n, kb, config.kb_match)
        )
    return feats


def build_vocabulary(
    corpus: Sequence[Sentence],
    config: FeatureConfig,
    kb: Optional[KBMapping] = None,
) -> FeatureVocabulary:
    """Build and freeze the vocabulary over a corpus.

    Covers every string the configured extractors emit over the corpus; for
    the knowledge preset the (tag, type) indicator strings for every type
    in ``kb`` are included up front, whether or not they fire on the
    training data -- knowledge expansion can make them fire later.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = FeatureVocabulary()
    for sentence in corpus:
        for n in range(1, len(sentence) + 1):
            for feature in position_features(sentence, n, config, kb):
                vocab.add(feature)
    if config.use_knowledge and kb:
        if config.kb_match == "flat":
            ktypes = sorted({k for tag in kb for k in kb[tag]})
            for ktype in ktypes:
                vocab.add(kb_feature_string(FLAT_TAG, ktype))
        else:
            for tag in sorted(kb):
                for ktype in sorted(kb[tag]):
                    vocab.add(kb_feature_string(tag, ktype))
    return vocab.freeze()


def vectorize(
    sentence: Sentence,
    vocab: FeatureVocabulary,
    kb: Optional[KBMapping] = None,
    config: FeatureConfig = FeatureConfig(),
) -> FeatureVectorSeq:
    """Turn a sentence into per-position sorted tuples of active feature ids.

    Strings absent from the (frozen) vocabulary are dropped. With the
    knowledge family enabled, a larger knowledge base can only add active
    ids, never remove them.
    """
    rows = []
    for n in range(1, len(sentence) + 1):
        ids = {
            fid
            for fid in map(vocab.get, position_features(sentence, n, config, kb))
            if fid is not None
        }
        rows.append(tuple(sorted(ids)))
    return tuple(rows)
