"""Linear-chain CRF: potentials, exact log-space inference, and penalized
maximum-likelihood training.

State features follow the indicator construction: every (feature id, tag)
pair carries one weight, active when the feature fires at a position carrying
that tag. First-order transition weights plus a begin-of-sequence row are
included on top. All inference runs in log space with log-sum-exp; ties are
broken everywhere by tag-set order, so every run is reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .corpus import Sentence, TagSet
from .features import (
    FeatureConfig,
    FeatureVectorSeq,
    FeatureVocabulary,
    KBMapping,
    build_vocabulary,
    vectorize,
)

MODEL_FORMAT = "kcrf-model"
MODEL_VERSION = 1

DEFAULT_SIGMA2 = 1.0
DEFAULT_MAX_ITER = 500
DEFAULT_GRAD_TOL = 1e-4


class TrainingError(RuntimeError):
    """Numerical failure during training (non-finite objective)."""


@dataclass
class Model:
    """A trained linear-chain CRF.

    ``state_weights`` has shape (M, T) over (feature id, tag);
    ``trans_weights`` has shape (T+1, T) with the begin-of-sequence row
    last. Immutable by convention after training.
    """

    tagset: TagSet
    vocabulary: FeatureVocabulary
    config: FeatureConfig
    state_weights: np.ndarray
    trans_weights: np.ndarray
    sigma2: float = DEFAULT_SIGMA2
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        t = len(self.tagset)
        m = len(self.vocabulary)
        self.state_weights = np.asarray(self.state_weights, dtype=np.float64)
        self.trans_weights = np.asarray(self.trans_weights, dtype=np.float64)
        if self.state_weights.shape != (m, t):
            raise ValueError(
                f"state weights shape {self.state_weights.shape} != ({m}, {t})"
            )
        if self.trans_weights.shape != (t + 1, t):
            raise ValueError(
                f"transition weights shape {self.trans_weights.shape} != ({t + 1}, {t})"
            )
        if not (np.isfinite(self.state_weights).all() and np.isfinite(self.trans_weights).all()):
            raise ValueError("model weights must be finite")
        if self.sigma2 <= 0:
            raise ValueError(f"regularization variance must be positive, got {self.sigma2}")

    @property
    def bos(self) -> int:
        return len(self.tagset)


@dataclass
class MarginalTable:
    """Per-position tag marginals p(y_n = t | x) plus the log-partition."""

    probs: np.ndarray
    log_partition: float


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(a - m), axis=axis))
    return out


def _emissions(model: Model, x: FeatureVectorSeq) -> np.ndarray:
    e = np.zeros((len(x), len(model.tagset)))
    for n, ids in enumerate(x):
        if ids:
            e[n] = model.state_weights[list(ids)].sum(axis=0)
    return e


def _check_lengths(x: FeatureVectorSeq, y: Sequence[str]) -> None:
    if len(x) == 0:
        raise ValueError("empty sequence")
    if len(y) != len(x):
        raise ValueError(f"{len(y)} tags for {len(x)} positions")


def score_sequence(model: Model, x: FeatureVectorSeq, y: Sequence[str]) -> float:
    """Unnormalized log-score of tag sequence ``y``: state terms plus
    transitions with an implicit begin-of-sequence predecessor."""
    _check_lengths(x, y)
    idx = [model.tagset.index(t) for t in y]
    emissions = _emissions(model, x)
    score = model.trans_weights[model.bos, idx[0]] + emissions[0, idx[0]]
    for n in range(1, len(x)):
        score += model.trans_weights[idx[n - 1], idx[n]] + emissions[n, idx[n]]
    return float(score)


def _alpha_beta(
    emissions: np.ndarray, trans: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Forward/backward log-messages and the log-partition value."""
    n_pos, n_tags = emissions.shape
    inner = trans[:n_tags]
    alpha = np.empty_like(emissions)
    alpha[0] = trans[n_tags] + emissions[0]
    for n in range(1, n_pos):
        alpha[n] = emissions[n] + _logsumexp(alpha[n - 1][:, None] + inner, axis=0)
    beta = np.zeros_like(emissions)
    for n in range(n_pos - 2, -1, -1):
        beta[n] = _logsumexp(inner + (emissions[n + 1] + beta[n + 1])[None, :], axis=1)
    log_z = float(_logsumexp(alpha[-1], axis=0))
    return alpha, beta, log_z


def forward_backward(model: Model, x: FeatureVectorSeq) -> MarginalTable:
    """Exact per-position marginals, each row summing to one."""
    if len(x) == 0:
        raise ValueError("empty sequence")
    alpha, beta, log_z = _alpha_beta(_emissions(model, x), model.trans_weights)
    return MarginalTable(np.exp(alpha + beta - log_z), log_z)


def viterbi(model: Model, x: FeatureVectorSeq) -> list[str]:
    """Highest-scoring tag sequence; ties go to the earlier tag in the
    tag-set order at every backpointer."""
    if len(x) == 0:
        raise ValueError("empty sequence")
    emissions = _emissions(model, x)
    n_pos, n_tags = emissions.shape
    inner = model.trans_weights[:n_tags]
    delta = model.trans_weights[model.bos] + emissions[0]
    pointers = np.empty((n_pos, n_tags), dtype=np.intp)
    for n in range(1, n_pos):
        scores = delta[:, None] + inner
        pointers[n] = np.argmax(scores, axis=0)
        delta = emissions[n] + np.max(scores, axis=0)
    best = int(np.argmax(delta))
    path = [best]
    for n in range(n_pos - 1, 0, -1):
        best = int(pointers[n, best])
        path.append(best)
    path.reverse()
    return [model.tagset.tags[t] for t in path]


def _nll_grad(
    state_w: np.ndarray,
    trans_w: np.ndarray,
    batch: Sequence[tuple[FeatureVectorSeq, Sequence[int]]],
    sigma2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalized NLL and its exact gradient over an index-encoded batch."""
    n_tags = state_w.shape[1]
    inner = trans_w[:n_tags]
    grad_state = np.zeros_like(state_w)
    grad_trans = np.zeros_like(trans_w)
    terms = []
    for x, y in batch:
        n_pos = len(x)
        emissions = np.zeros((n_pos, n_tags))
        for n, ids in enumerate(x):
            if ids:
                emissions[n] = state_w[list(ids)].sum(axis=0)
        alpha, beta, log_z = _alpha_beta(emissions, trans_w)
        marginals = np.exp(alpha + beta - log_z)

        gold = trans_w[n_tags, y[0]] + emissions[0, y[0]]
        for n in range(1, n_pos):
            gold += inner[y[n - 1], y[n]] + emissions[n, y[n]]
        terms.append(log_z - gold)

        # expected minus empirical state counts
        for n, ids in enumerate(x):
            if ids:
                delta = marginals[n].copy()
                delta[y[n]] -= 1.0
                grad_state[list(ids)] += delta
        # begin-of-sequence row
        grad_trans[n_tags] += marginals[0]
        grad_trans[n_tags, y[0]] -= 1.0
        # pairwise transition marginals
        for n in range(1, n_pos):
            pair = np.exp(
                alpha[n - 1][:, None] + inner + (emissions[n] + beta[n])[None, :] - log_z
            )
            grad_trans[:n_tags] += pair
            grad_trans[y[n - 1], y[n]] -= 1.0
    penalty = (np.sum(state_w**2) + np.sum(trans_w**2)) / (2.0 * sigma2)
    nll = math.fsum(terms) + penalty
    grad_state += state_w / sigma2
    grad_trans += trans_w / sigma2
    return nll, grad_state, grad_trans


def _encode_batch(
    batch: Sequence[tuple[FeatureVectorSeq, Sequence[str]]], tagset: TagSet
) -> list[tuple[FeatureVectorSeq, list[int]]]:
    encoded = []
    for x, y in batch:
        _check_lengths(x, y)
        encoded.append((x, [tagset.index(t) for t in y]))
    return encoded


def nll_and_gradient(
    model: Model, batch: Sequence[tuple[FeatureVectorSeq, Sequence[str]]]
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Penalized negative log-likelihood of a labeled batch and its gradient
    with respect to (state weights, transition weights)."""
    nll, grad_state, grad_trans = _nll_grad(
        model.state_weights,
        model.trans_weights,
        _encode_batch(batch, model.tagset),
        model.sigma2,
    )
    return nll, (grad_state, grad_trans)


def train(
    data: Sequence[tuple[FeatureVectorSeq, Sequence[str]]],
    tagset: TagSet,
    vocabulary: FeatureVocabulary,
    config: FeatureConfig,
    sigma2: float = DEFAULT_SIGMA2,
    max_iter: int = DEFAULT_MAX_ITER,
    grad_tol: float = DEFAULT_GRAD_TOL,
) -> Model:
    """Full-batch L-BFGS minimization of the penalized NLL.

    Deterministic given the corpus order; stops when the gradient sup-norm
    drops to ``grad_tol`` or after ``max_iter`` iterations. Raises
    :class:`TrainingError` if the objective turns non-finite.
    """
    if not data:
        raise ValueError("cannot train on an empty corpus")
    if sigma2 <= 0:
        raise ValueError(f"regularization variance must be positive, got {sigma2}")
    batch = _encode_batch(data, tagset)
    n_tags = len(tagset)
    n_feats = len(vocabulary)
    state_size = n_feats * n_tags
    evaluations = 0

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        nonlocal evaluations
        evaluations += 1
        state_w = w[:state_size].reshape(n_feats, n_tags)
        trans_w = w[state_size:].reshape(n_tags + 1, n_tags)
        nll, gs, gt = _nll_grad(state_w, trans_w, batch, sigma2)
        if not np.isfinite(nll):
            raise TrainingError(
                f"non-finite objective at evaluation {evaluations}"
            )
        return nll, np.concatenate([gs.ravel(), gt.ravel()])

    w0 = np.zeros(state_size + (n_tags + 1) * n_tags)
    result = minimize(
        objective,
        w0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": max_iter,
            "gtol": grad_tol,
            "ftol": 1e-14,
            "maxfun": 100 * max_iter,
        },
    )
    grad_norm = float(np.max(np.abs(result.jac))) if result.jac is not None else float("nan")
    if not np.isfinite(result.fun):
        raise TrainingError(f"non-finite objective at evaluation {evaluations}")
    return Model(
        tagset=tagset,
        vocabulary=vocabulary,
        config=config,
        state_weights=result.x[:state_size].reshape(n_feats, n_tags),
        trans_weights=result.x[state_size:].reshape(n_tags + 1, n_tags),
        sigma2=sigma2,
        training={
            "iterations": int(result.nit),
            "evaluations": evaluations,
            "objective": float(result.fun),
            "grad_norm": grad_norm,
            "converged": bool(result.status == 0),
        },
    )


def fit(
    corpus: Sequence[Sentence],
    tagset: TagSet,
    config: FeatureConfig,
    kb: Optional[KBMapping] = None,
    sigma2: float = DEFAULT_SIGMA2,
    max_iter: int = DEFAULT_MAX_ITER,
    grad_tol: float = DEFAULT_GRAD_TOL,
) -> Model:
    """Vocabulary construction, vectorization, and training in one step."""
    for i, sentence in enumerate(corpus):
        if sentence.labels is None:
            raise ValueError(f"sentence {i} is unlabeled; training needs labels")
    vocabulary = build_vocabulary(corpus, config, kb)
    data = [(vectorize(s, vocabulary, kb, config), s.labels) for s in corpus]
    return train(data, tagset, vocabulary, config, sigma2, max_iter, grad_tol)


def predict_tags(
    model: Model, sentence: Sentence, kb: Optional[KBMapping] = None
) -> list[str]:
    return viterbi(model, vectorize(sentence, model.vocabulary, kb, model.config))


def predict_corpus(
    model: Model, sentences: Sequence[Sentence], kb: Optional[KBMapping] = None
) -> list[Sentence]:
    """Viterbi-label each sentence, returning new Sentence values."""
    return [
        replace(s, labels=tuple(predict_tags(model, s, kb))) for s in sentences
    ]


def model_to_payload(model: Model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "tags": list(model.tagset.tags),
        "feature_config": {"preset": model.config.preset, "kb_match": model.config.kb_match},
        "sigma2": model.sigma2,
        "vocabulary": model.vocabulary.strings,
        "state_weights": model.state_weights.tolist(),
        "trans_weights": model.trans_weights.tolist(),
        "training": model.training,
    }


def model_from_payload(payload: dict) -> Model:
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ValueError("not a model file")
    if payload.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {payload.get('version')!r}")
    return Model(
        tagset=TagSet(tuple(payload["tags"])),
        vocabulary=FeatureVocabulary(payload["vocabulary"]).freeze(),
        config=FeatureConfig(**payload["feature_config"]),
        state_weights=np.array(payload["state_weights"], dtype=np.float64),
        trans_weights=np.array(payload["trans_weights"], dtype=np.float64),
        sigma2=float(payload["sigma2"]),
        training=dict(payload.get("training", {})),
    )


def model_to_bytes(model: Model) -> bytes:
    return (
        json.dumps(model_to_payload(model), ensure_ascii=False, separators=(",", ":"))
        + "\n"
    ).encode("utf-8")


def model_from_bytes(data: bytes) -> Model:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable model file: {exc}") from exc
    return model_from_payload(payload)


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
