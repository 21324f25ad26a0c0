"""Mention-level scoring and the four-system experiment harness.

Systems compared: CRF(-)DR (window/word-shape features only), CRF (adds raw
dependency primitives), CRF-Init (knowledge-preset model with its initial
knowledge base), and KCRF (the same model after knowledge expansion on
unlabeled text). A deterministic synthetic-corpus generator provides
desk-scale scenarios where expansion is the only way to recover part of the
test mentions.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Sequence

from .corpus import DEFAULT_TAGSET, Sentence, TagSet, Token, DependencyArc, load_corpus
from .crf import Model, fit, predict_corpus
from .expansion import ExpansionTrace, expand
from .features import FeatureConfig
from .knowledge import KnowledgeBase, build_initial_kb, select_knowledge_types

SYSTEM_CRF_DR = "CRF(-)DR"
SYSTEM_CRF = "CRF"
SYSTEM_CRF_INIT = "CRF-Init"
SYSTEM_KCRF = "KCRF"
SYSTEMS = (SYSTEM_CRF_DR, SYSTEM_CRF, SYSTEM_CRF_INIT, SYSTEM_KCRF)

MODES = ("exact", "containment")


class Mention(NamedTuple):
    """Inclusive 1-based token span of one entity mention."""

    start: int
    end: int


@dataclass(frozen=True)
class EvaluationReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def extract_mentions(
    tags: Sequence[str],
    tagset: TagSet = DEFAULT_TAGSET,
    entity_tag: str = "ENT",
) -> list[Mention]:
    """Maximal contiguous runs of the entity tag, as inclusive spans."""
    if entity_tag not in tagset:
        raise ValueError(f"entity tag {entity_tag!r} not in tag set {tagset.tags}")
    for tag in tags:
        if tag not in tagset:
            raise ValueError(f"unknown tag {tag!r}")
    mentions = []
    start = None
    for n, tag in enumerate(tags, start=1):
        if tag == entity_tag:
            if start is None:
                start = n
        elif start is not None:
            mentions.append(Mention(start, n - 1))
            start = None
    if start is not None:
        mentions.append(Mention(start, len(tags)))
    return mentions


def corpus_mentions(
    sentences: Sequence[Sentence],
    tagset: TagSet = DEFAULT_TAGSET,
    entity_tag: str = "ENT",
) -> dict[int, list[Mention]]:
    """Mentions per sentence, keyed by position in the corpus."""
    out = {}
    for i, sentence in enumerate(sentences):
        if sentence.labels is None:
            raise ValueError(f"sentence {i} has no labels to extract mentions from")
        out[i] = extract_mentions(sentence.labels, tagset, entity_tag)
    return out


def _checked_spans(mentions: Sequence[Mention], side: str, key) -> list[Mention]:
    spans = sorted(Mention(*m) for m in mentions)
    prev_end = 0
    for m in spans:
        if not 1 <= m.start <= m.end:
            raise ValueError(f"{side} mention {m} in sentence {key} is malformed")
        if m.start <= prev_end:
            raise ValueError(f"overlapping {side} mentions in sentence {key}")
        prev_end = m.end
    return spans


def score(
    gold: Mapping[int, Sequence[Mention]],
    pred: Mapping[int, Sequence[Mention]],
    mode: str = "exact",
) -> EvaluationReport:
    """Mention-level counts over a corpus.

    Per sentence, predictions are matched greedily left to right against
    unmatched gold mentions: a match is an identical span in ``exact`` mode,
    or a token-subspan of a gold mention in ``containment`` mode. Matched
    predictions count tp, unmatched ones fp, and every gold mention that no
    prediction matched counts fn. A gold mention can be matched at most
    once. Overlapping spans within either side are rejected.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    tp = fp = fn = 0
    for key in sorted(set(gold) | set(pred)):
        gold_spans = _checked_spans(gold.get(key, ()), "gold", key)
        pred_spans = _checked_spans(pred.get(key, ()), "predicted", key)
        taken = [False] * len(gold_spans)
        for p in pred_spans:
            hit = None
            for gi, g in enumerate(gold_spans):
                if taken[gi]:
                    continue
                if (mode == "exact" and p == g) or (
                    mode == "containment" and g.start <= p.start and p.end <= g.end
                ):
                    hit = gi
                    break
            if hit is None:
                fp += 1
            else:
                taken[hit] = True
                tp += 1
        fn += taken.count(False)
    return EvaluationReport(tp, fp, fn)


# ---------------------------------------------------------------------------
# experiment harness


@dataclass(frozen=True)
class ProductSpec:
    """Per-product evaluation inputs."""

    name: str
    test: Path
    unlabeled: Optional[Path] = None


@dataclass(frozen=True)
class ExperimentConfig:
    train: tuple[Path, ...]
    products: tuple[ProductSpec, ...]
    delta: float = 0.3
    delta_prime: float = 0.8
    sigma2: float = 1.0
    max_iters: int = 10
    max_iter: int = 500
    grad_tol: float = 1e-4
    mode: str = "exact"
    tags: tuple[str, ...] = ("ENT", "O")
    entity_tag: str = "ENT"
    kb_match: str = "per_tag"
    strict: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent

        def resolve(p):
            return (base / p).resolve()

        train = raw.get("train")
        if train is None:
            raise ValueError("experiment config needs a 'train' entry")
        if isinstance(train, str):
            train = [train]
        products = tuple(
            ProductSpec(
                name=entry["name"],
                test=resolve(entry["test"]),
                unlabeled=resolve(entry["unlabeled"]) if entry.get("unlabeled") else None,
            )
            for entry in raw.get("products", ())
        )
        if not products:
            raise ValueError("experiment config needs at least one product")
        kwargs = {
            key: raw[key]
            for key in (
                "delta", "delta_prime", "sigma2", "max_iters", "max_iter",
                "grad_tol", "mode", "entity_tag", "kb_match", "strict",
            )
            if key in raw
        }
        if "tags" in raw:
            kwargs["tags"] = tuple(raw["tags"])
        return cls(
            train=tuple(resolve(p) for p in train), products=products, **kwargs
        )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scores: dict[str, dict[str, dict[str, EvaluationReport]]]
    models: dict[str, Model]
    kb_initial: KnowledgeBase
    kb_expanded: dict[str, KnowledgeBase]
    traces: dict[str, ExpansionTrace]
    predictions: dict[str, dict[str, list[Sentence]]] = field(default_factory=dict)

    def payload(self) -> dict:
        return {
            "mode": self.config.mode,
            "products": {
                product: {
                    system: {
                        mode: report.as_dict()
                        for mode, report in per_system.items()
                    }
                    for system, per_system in per_product.items()
                }
                for product, per_product in self.scores.items()
            },
        }


def format_table(result: ExperimentResult, mode: Optional[str] = None) -> str:
    """Aligned text table: one product per row, P/R/F1 per system."""
    mode = mode or result.config.mode
    name_width = max([len("Product")] + [len(p) for p in result.scores])
    header1 = " " * name_width + "  " + "  ".join(f"{s:^18}" for s in SYSTEMS)
    header2 = (
        f"{'Product':<{name_width}}  "
        + "  ".join(f"{'P':>5} {'R':>5} {'F1':>5} " for _ in SYSTEMS)
    )
    lines = [f"mention-level scores ({mode} span matching)", header1, header2]
    for product, per_system in result.scores.items():
        cells = []
        for system in SYSTEMS:
            report = per_system[system][mode]
            cells.append(
                f"{report.precision:>5.2f} {report.recall:>5.2f} {report.f1:>5.2f} "
            )
        lines.append(f"{product:<{name_width}}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def run_experiment(
    config: ExperimentConfig, output_dir: Optional[str | Path] = None
) -> ExperimentResult:
    """Train the four systems, expand knowledge per product, and score all.

    CRF-Init and KCRF share one trained model; they differ only in the
    knowledge base handed to prediction, so the ablation is literally a
    file swap. With no unlabeled data for a product, its KCRF row equals
    its CRF-Init row.
    """
    tagset = TagSet(config.tags)
    train_corpus: list[Sentence] = []
    for path in config.train:
        train_corpus.extend(load_corpus(path, tagset, expect_labels=True))
    if not train_corpus:
        raise ValueError("training corpus is empty")

    fit_kwargs = dict(
        sigma2=config.sigma2, max_iter=config.max_iter, grad_tol=config.grad_tol
    )
    model_basic = fit(train_corpus, tagset, FeatureConfig("basic"), **fit_kwargs)
    model_primitive = fit(train_corpus, tagset, FeatureConfig("primitive"), **fit_kwargs)
    selection = select_knowledge_types(model_primitive, config.delta)
    kb_initial = build_initial_kb(model_primitive, selection)
    model_kcrf = fit(
        train_corpus,
        tagset,
        FeatureConfig("knowledge", config.kb_match),
        kb=kb_initial,
        **fit_kwargs,
    )

    result = ExperimentResult(
        config=config,
        scores={},
        models={
            SYSTEM_CRF_DR: model_basic,
            SYSTEM_CRF: model_primitive,
            SYSTEM_KCRF: model_kcrf,
        },
        kb_initial=kb_initial,
        kb_expanded={},
        traces={},
    )
    for product in config.products:
        test = load_corpus(product.test, tagset, expect_labels=True)
        gold = corpus_mentions(test, tagset, config.entity_tag)
        if product.unlabeled is not None:
            unlabeled = load_corpus(product.unlabeled, tagset, expect_labels=False)
            kb_expanded, trace = expand(
                model_kcrf,
                kb_initial,
                unlabeled,
                delta_prime=config.delta_prime,
                max_iters=config.max_iters,
                strict=config.strict,
            )
        else:
            kb_expanded, trace = kb_initial.copy(), ExpansionTrace()
        result.kb_expanded[product.name] = kb_expanded
        result.traces[product.name] = trace

        predicted = {
            SYSTEM_CRF_DR: predict_corpus(model_basic, test),
            SYSTEM_CRF: predict_corpus(model_primitive, test),
            SYSTEM_CRF_INIT: predict_corpus(model_kcrf, test, kb_initial),
            SYSTEM_KCRF: predict_corpus(model_kcrf, test, kb_expanded),
        }
        result.predictions[product.name] = predicted
        result.scores[product.name] = {
            system: {
                mode: score(
                    gold,
                    corpus_mentions(predicted[system], tagset, config.entity_tag),
                    mode,
                )
                for mode in MODES
            }
            for system in SYSTEMS
        }
    if output_dir is not None:
        _write_experiment(result, Path(output_dir))
    return result


def _write_experiment(result: ExperimentResult, output_dir: Path) -> None:
    from .corpus import save_corpus
    from .crf import save_model
    from .knowledge import save_kb

    output_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.models[SYSTEM_CRF_DR], output_dir / "crf_dr.model.json")
    save_model(result.models[SYSTEM_CRF], output_dir / "crf.model.json")
    save_model(result.models[SYSTEM_KCRF], output_dir / "kcrf.model.json")
    save_kb(result.kb_initial, output_dir / "initial.kb.json")
    tags = result.config.tags
    for product in result.scores:
        save_kb(result.kb_expanded[product], output_dir / f"{product}.expanded.kb.json")
        result.traces[product].write_jsonl(output_dir / f"{product}.trace.jsonl", tags)
        for system, sentences in result.predictions[product].items():
            slug = system.replace("(-)", "_").replace("-", "_").lower()
            save_corpus(sentences, output_dir / f"{product}.{slug}.pred.tsv")
    (output_dir / "report.txt").write_text(
        format_table(result, result.config.mode), encoding="utf-8"
    )
    (output_dir / "results.json").write_text(
        json.dumps(result.payload(), ensure_ascii=False, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass(frozen=True)
class SyntheticConfig:
    """Pools and sizes for the deterministic bootstrap scenario.

    Training verbs appear with entities in the training data; expansion
    verbs appear only in unlabeled and test text, so test mentions in their
    sentences are recoverable only after knowledge expansion. Ambiguous
    verbs co-occur with both entities and plain objects in the unlabeled
    data to give pruning something to remove. Nouns also occur in
    verb-neutral sentences so that word identity carries weight on its own.
    """

    train_size: int = 200
    unlabeled_size: int = 2000
    test_size: int = 200
    train_entities: tuple[str, ...] = ("iphone", "ipad", "kindle", "galaxy", "nexus")
    #: rare entity words, one or two training occurrences each: with no word
    #: evidence to lean on, the dependency context has to carry them
    longtail_entities: tuple[str, ...] = tuple(
        f"device{a}{b}" for a in "abcde" for b in "abcdef"
    )
    unlabeled_entities: tuple[str, ...] = (
        "pixel", "thinkpad", "ideapad", "imac", "zenbook",
    )
    test_entities: tuple[str, ...] = (
        "fairphone", "aspire", "envy", "swift", "vivobook",
    )
    train_verbs: tuple[str, ...] = ("works", "fits", "connects")
    expansion_verbs: tuple[str, ...] = ("holds", "supports", "carries")
    negative_verbs: tuple[str, ...] = ("clashes", "conflicts", "interferes")
    ambiguous_verbs: tuple[str, ...] = ("goes",)
    objects: tuple[str, ...] = ("case", "box", "manual", "receipt", "charger")
    longtail_objects: tuple[str, ...] = tuple(
        f"item{a}{b}" for a in "abcde" for b in "abcdef"
    )
    entity_tag: str = "ENT"
    outside_tag: str = "O"
    #: regularization variance the scenario is calibrated for
    sigma2: float = 200.0


@dataclass
class SyntheticData:
    train: list[Sentence]
    unlabeled: list[Sentence]
    test: list[Sentence]
    #: 0-based indices into ``test`` of sentences whose entity co-occurs only
    #: with an expansion verb
    expansion_test_ids: tuple[int, ...]


_VERB = "{verb}"
_NOUN = "{noun}"

# "with my <noun>" contexts: the verb governs the noun via nmod:with in all
# shapes, but surface geometry varies so no single window slot is decisive
_PP_TEMPLATES = (
    (
        ("this", "DT", 2, "det"),
        ("product", "NN", 3, "nsubj"),
        (_VERB, "VBZ", 0, "root"),
        ("with", "IN", 6, "case"),
        ("my", "PRP$", 6, "nmod:poss"),
        (_NOUN, "NNP", 3, "nmod:with"),
        (".", ".", 3, "punct"),
    ),
    (
        ("it", "PRP", 2, "nsubj"),
        (_VERB, "VBZ", 0, "root"),
        ("well", "RB", 2, "advmod"),
        ("with", "IN", 6, "case"),
        ("my", "PRP$", 6, "nmod:poss"),
        (_NOUN, "NNP", 2, "nmod:with"),
        (".", ".", 2, "punct"),
    ),
    (
        ("this", "DT", 2, "nsubj"),
        (_VERB, "VBZ", 0, "root"),
        ("with", "IN", 5, "case"),
        ("my", "PRP$", 5, "nmod:poss"),
        (_NOUN, "NNP", 2, "nmod:with"),
        ("perfectly", "RB", 2, "advmod"),
        (".", ".", 2, "punct"),
    ),
    (
        ("the", "DT", 2, "det"),
        ("stand", "NN", 3, "nsubj"),
        (_VERB, "VBZ", 0, "root"),
        ("with", "IN", 6, "case"),
        ("my", "PRP$", 6, "nmod:poss"),
        (_NOUN, "NNP", 3, "nmod:with"),
        ("too", "RB", 3, "advmod"),
        (".", ".", 3, "punct"),
    ),
)

# verb-neutral contexts, used for entities and plain objects alike: only the
# noun itself separates the classes here
_PLAIN_TEMPLATES = (
    (
        ("i", "PRP", 2, "nsubj"),
        ("love", "VBP", 0, "root"),
        ("my", "PRP$", 4, "nmod:poss"),
        (_NOUN, "NNP", 2, "dobj"),
        (".", ".", 2, "punct"),
    ),
    (
        ("i", "PRP", 2, "nsubj"),
        ("got", "VBD", 0, "root"),
        ("my", "PRP$", 4, "nmod:poss"),
        (_NOUN, "NNP", 2, "dobj"),
        ("yesterday", "NN", 2, "nmod:tmod"),
        (".", ".", 2, "punct"),
    ),
)

_FILLER_TEMPLATES = (
    (
        ("this", "DT", 2, "det"),
        ("product", "NN", 4, "nsubj"),
        ("is", "VBZ", 4, "cop"),
        ("great", "JJ", 0, "root"),
        (".", ".", 4, "punct"),
    ),
    (
        ("i", "PRP", 2, "nsubj"),
        ("love", "VBP", 0, "root"),
        ("it", "PRP", 2, "dobj"),
        (".", ".", 2, "punct"),
    ),
    (
        ("it", "PRP", 2, "nsubj"),
        ("works", "VBZ", 0, "root"),
        ("well", "RB", 2, "advmod"),
        (".", ".", 2, "punct"),
    ),
)


def _instantiate(
    template: Sequence[tuple],
    noun_tag: str,
    out: str,
    labeled: bool,
    verb: Optional[str] = None,
    noun: Optional[str] = None,
) -> Sentence:
    tokens = []
    arcs = []
    labels = []
    for i, (form, pos, head, deprel) in enumerate(template, start=1):
        label = out
        if form == _VERB:
            form = verb
        elif form == _NOUN:
            form = noun
            label = noun_tag
        tokens.append(Token(i, form, pos))
        arcs.append(DependencyArc(deprel, head, i))
        labels.append(label)
    return Sentence(
        tuple(tokens), tuple(arcs), tuple(labels) if labeled else None
    )


def _cycled(
    rng: random.Random,
    templates: Sequence,
    verbs: Sequence[Optional[str]],
    nouns: Sequence[str],
    count: int,
) -> list[tuple]:
    cross = [
        (templates[t], v, n)
        for t in range(len(templates))
        for v in verbs
        for n in nouns
    ]
    rng.shuffle(cross)
    return [cross[i % len(cross)] for i in range(count)]


def generate_synthetic(seed: int, config: SyntheticConfig = SyntheticConfig()) -> SyntheticData:
    """Deterministic train/unlabeled/test corpora for the bootstrap scenario.

    Training pairs training verbs with training entities (plus negative,
    verb-neutral, and filler sentences); unlabeled text mixes training and
    expansion verbs over known and fresh entities; the test set pairs both
    verb groups with entities never seen elsewhere and records which
    sentences depend on an expansion verb.
    """
    for name in (
        "train_entities", "unlabeled_entities", "test_entities", "train_verbs",
        "expansion_verbs", "negative_verbs", "ambiguous_verbs", "objects",
    ):
        if not getattr(config, name):
            raise ValueError(f"degenerate config: empty pool {name!r}")
    for name in ("train_size", "unlabeled_size", "test_size"):
        if getattr(config, name) < 10:
            raise ValueError(f"degenerate config: {name} must be >= 10")
    rng = random.Random(seed)
    ent, out = config.entity_tag, config.outside_tag

    def fillers(count, labeled):
        return [
            _instantiate(_FILLER_TEMPLATES[i % len(_FILLER_TEMPLATES)], out, out, labeled)
            for i in range(count)
        ]

    def batch(templates, verbs, nouns, count, is_entity, labeled):
        return [
            _instantiate(t, ent if is_entity else out, out, labeled, verb=v, noun=n)
            for t, v, n in _cycled(rng, templates, verbs, nouns, count)
        ]

    plain = (None,)
    size = config.train_size
    n_pos, n_neg = int(size * 0.25), int(size * 0.25)
    n_tail = int(size * 0.15)
    n_wpos, n_wneg = int(size * 0.075), int(size * 0.075)
    train = (
        batch(_PP_TEMPLATES, config.train_verbs, config.train_entities, n_pos, True, True)
        + batch(_PP_TEMPLATES, config.negative_verbs, config.objects, n_neg, False, True)
        + batch(_PP_TEMPLATES, config.train_verbs, config.longtail_entities, n_tail, True, True)
        + batch(_PP_TEMPLATES, config.negative_verbs, config.longtail_objects, n_tail, False, True)
        + batch(_PLAIN_TEMPLATES, plain, config.train_entities, n_wpos, True, True)
        + batch(_PLAIN_TEMPLATES, plain, config.objects, n_wneg, False, True)
        + fillers(size - n_pos - n_neg - 2 * n_tail - n_wpos - n_wneg, True)
    )
    rng.shuffle(train)

    u = config.unlabeled_size
    unlabeled = (
        batch(_PP_TEMPLATES, config.train_verbs, config.train_entities, int(u * 0.2), False, False)
        + batch(_PP_TEMPLATES, config.expansion_verbs, config.train_entities, int(u * 0.25), False, False)
        + batch(_PP_TEMPLATES, config.expansion_verbs, config.unlabeled_entities, int(u * 0.15), False, False)
        + batch(_PP_TEMPLATES, config.negative_verbs, config.objects, int(u * 0.1), False, False)
        + batch(_PP_TEMPLATES, config.ambiguous_verbs, config.train_entities, int(u * 0.075), False, False)
        + batch(_PP_TEMPLATES, config.ambiguous_verbs, config.objects, int(u * 0.075), False, False)
        + batch(_PLAIN_TEMPLATES, plain, config.train_entities, int(u * 0.05), False, False)
    )
    unlabeled += fillers(u - len(unlabeled), False)
    rng.shuffle(unlabeled)

    n_exp = int(config.test_size * 0.4)
    n_seen = int(config.test_size * 0.3)
    n_tneg = config.test_size - n_exp - n_seen
    flagged = (
        [
            (s, True)
            for s in batch(_PP_TEMPLATES, config.expansion_verbs, config.test_entities, n_exp, True, True)
        ]
        + [
            (s, False)
            for s in batch(_PP_TEMPLATES, config.train_verbs, config.test_entities, n_seen, True, True)
        ]
        + [
            (s, False)
            for s in batch(_PP_TEMPLATES, config.negative_verbs, config.objects, n_tneg, False, True)
        ]
    )
    rng.shuffle(flagged)
    test = [s for s, _ in flagged]
    expansion_ids = tuple(i for i, (_, is_exp) in enumerate(flagged) if is_exp)
    return SyntheticData(train, unlabeled, test, expansion_ids)
