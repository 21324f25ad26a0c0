"""Sequence-labeling toolkit: a linear-chain CRF whose predictions improve
after training by expanding a knowledge base of (type, value) pairs over
unlabeled text."""

from .corpus import (
    CorpusError,
    DependencyArc,
    Sentence,
    TagSet,
    Token,
    dependency_view,
    load_corpus,
    parse_corpus,
    save_corpus,
    serialize_corpus,
)
from .crf import (
    MarginalTable,
    Model,
    TrainingError,
    fit,
    forward_backward,
    load_model,
    nll_and_gradient,
    predict_corpus,
    predict_tags,
    save_model,
    score_sequence,
    train,
    viterbi,
)
from .evaluation import (
    EvaluationReport,
    ExperimentConfig,
    Mention,
    ProductSpec,
    SyntheticConfig,
    extract_mentions,
    generate_synthetic,
    run_experiment,
    score,
)
from .expansion import ExpansionTrace, collect_candidates, expand, prune, reliable_positions
from .features import (
    FeatureConfig,
    FeatureVocabulary,
    build_vocabulary,
    extract_basic,
    extract_primitive,
    knowledge_features,
    primitive_to_kv,
    vectorize,
)
from .knowledge import (
    KnowledgeBase,
    build_initial_kb,
    feature_entropy,
    kb_diff,
    load_kb,
    save_kb,
    select_knowledge_types,
    tag_distribution,
)

__version__ = "0.1.0"
