"""Command-line surface tying the pipeline together.

Subcommands: pretrain, select, train, expand, predict, eval, experiment,
synth. Each stage reads and writes plain artifacts (model, knowledge base,
predictions), so the CRF-Init/KCRF ablation is just a knowledge-base file
swap at predict time. Exit codes: 0 success, 1 validation failure, 2 I/O
failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import CorpusError, TagSet, load_corpus, save_corpus
from .crf import TrainingError, fit, load_model, predict_corpus, save_model
from .evaluation import (
    ExperimentConfig,
    SyntheticConfig,
    corpus_mentions,
    format_table,
    generate_synthetic,
    run_experiment,
    score,
)
from .expansion import expand
from .features import FeatureConfig
from .knowledge import build_initial_kb, load_kb, save_kb, select_knowledge_types

log = logging.getLogger("kcrf")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


@dataclass
class PipelineConfig:
    """Merged view of config-file values and command-line flags."""

    train: Optional[Path] = None
    test: Optional[Path] = None
    unlabeled: Optional[Path] = None
    input: Optional[Path] = None
    gold: Optional[Path] = None
    pred: Optional[Path] = None
    model: Optional[Path] = None
    kb: Optional[Path] = None
    out_kb: Optional[Path] = None
    output: Optional[Path] = None
    output_dir: Optional[Path] = None
    report: Optional[Path] = None
    trace: Optional[Path] = None
    delta: float = 0.3
    delta_prime: float = 0.8
    sigma2: float = 1.0
    max_iters: int = 10
    max_iter: int = 500
    grad_tol: float = 1e-4
    preset: str = "primitive"
    kb_match: str = "per_tag"
    tags: tuple[str, ...] = ("ENT", "O")
    entity_tag: str = "ENT"
    mode: str = "exact"
    seed: int = 0
    strict: bool = False
    train_size: int = 200
    unlabeled_size: int = 2000
    test_size: int = 200

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"--delta must be non-negative, got {self.delta}")
        if not 0 < self.delta_prime <= 1:
            raise ValueError(f"--delta-prime must be in (0, 1], got {self.delta_prime}")
        if self.sigma2 <= 0:
            raise ValueError(f"--sigma2 must be positive, got {self.sigma2}")
        if self.max_iters < 1 or self.max_iter < 1:
            raise ValueError("iteration limits must be >= 1")

    @property
    def tagset(self) -> TagSet:
        return TagSet(self.tags)

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ValueError(f"missing required option --{name.replace('_', '-')}")

    def check_inputs(self, *names: str) -> None:
        """Validate that every named input path exists before any stage runs."""
        for name in names:
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(f"--{name.replace('_', '-')}: no such file: {path}")


_PATH_FIELDS = frozenset(
    (
        "train", "test", "unlabeled", "input", "gold", "pred", "model", "kb",
        "out_kb", "output", "output_dir", "report", "trace",
    )
)


def _merge_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        base = Path(config_path).parent
        for key, value in raw.items():
            field = key.replace("-", "_")
            if field in _PATH_FIELDS and value is not None:
                value = base / value
            values[field] = value
    for field in PipelineConfig.__dataclass_fields__:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    if "tags" in values and not isinstance(values["tags"], tuple):
        tags = values["tags"]
        values["tags"] = tuple(tags.split(",")) if isinstance(tags, str) else tuple(tags)
    for field in _PATH_FIELDS:
        if values.get(field) is not None:
            values[field] = Path(values[field])
    known = set(PipelineConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**values)


def cmd_pretrain(cfg: PipelineConfig) -> int:
    cfg.require("train", "model")
    cfg.check_inputs("train")
    sentences = load_corpus(cfg.train, cfg.tagset, expect_labels=True)
    log.info("training %s-preset model on %d sentences", cfg.preset, len(sentences))
    model = fit(
        sentences,
        cfg.tagset,
        FeatureConfig(cfg.preset, cfg.kb_match),
        sigma2=cfg.sigma2,
        max_iter=cfg.max_iter,
        grad_tol=cfg.grad_tol,
    )
    save_model(model, cfg.model)
    log.info(
        "saved %s (%d features, %d iterations)",
        cfg.model, len(model.vocabulary), model.training.get("iterations", -1),
    )
    return EXIT_OK


def cmd_select(cfg: PipelineConfig) -> int:
    cfg.require("model", "kb")
    cfg.check_inputs("model")
    model = load_model(cfg.model)
    selection = select_knowledge_types(model, cfg.delta)
    kb = build_initial_kb(model, selection)
    save_kb(kb, cfg.kb)
    if cfg.report is not None:
        Path(cfg.report).write_text(
            selection.report.summary(model.tagset.tags), encoding="utf-8"
        )
    log.info("initial knowledge base: %d pairs -> %s", kb.total(), cfg.kb)
    return EXIT_OK


def cmd_train(cfg: PipelineConfig) -> int:
    cfg.require("train", "kb", "model")
    cfg.check_inputs("train", "kb")
    sentences = load_corpus(cfg.train, cfg.tagset, expect_labels=True)
    kb = load_kb(cfg.kb)
    for tag in kb:
        if tag not in cfg.tagset:
            raise ValueError(f"knowledge base tag {tag!r} not in tag set {cfg.tags}")
    model = fit(
        sentences,
        cfg.tagset,
        FeatureConfig("knowledge", cfg.kb_match),
        kb=kb,
        sigma2=cfg.sigma2,
        max_iter=cfg.max_iter,
        grad_tol=cfg.grad_tol,
    )
    save_model(model, cfg.model)
    log.info("saved knowledge-preset model -> %s", cfg.model)
    return EXIT_OK


def cmd_expand(cfg: PipelineConfig) -> int:
    cfg.require("model", "kb", "unlabeled", "out_kb")
    cfg.check_inputs("model", "kb", "unlabeled")
    model = load_model(cfg.model)
    kb0 = load_kb(cfg.kb)
    unlabeled = load_corpus(cfg.unlabeled, model.tagset, expect_labels=False)
    kb, trace = expand(
        model,
        kb0,
        unlabeled,
        delta_prime=cfg.delta_prime,
        max_iters=cfg.max_iters,
        strict=cfg.strict,
    )
    save_kb(kb, cfg.out_kb)
    if cfg.trace is not None:
        trace.write_jsonl(cfg.trace, model.tagset.tags)
    log.info(
        "expansion: %d -> %d pairs in %d iterations%s",
        kb0.total(), kb.total(), len(trace.iterations),
        " (iteration cap reached)" if trace.capped else "",
    )
    return EXIT_OK


def cmd_predict(cfg: PipelineConfig) -> int:
    cfg.require("model", "input", "output")
    cfg.check_inputs("model", "input", "kb")
    model = load_model(cfg.model)
    kb = load_kb(cfg.kb) if cfg.kb is not None else None
    sentences = load_corpus(cfg.input, model.tagset, expect_labels=False)
    save_corpus(predict_corpus(model, sentences, kb), cfg.output)
    log.info("wrote predictions for %d sentences -> %s", len(sentences), cfg.output)
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    cfg.require("gold", "pred")
    cfg.check_inputs("gold", "pred")
    tagset = cfg.tagset
    gold_sentences = load_corpus(cfg.gold, tagset, expect_labels=True)
    pred_sentences = load_corpus(cfg.pred, tagset, expect_labels=True)
    if len(gold_sentences) != len(pred_sentences):
        raise ValueError(
            f"gold has {len(gold_sentences)} sentences, predictions {len(pred_sentences)}"
        )
    gold = corpus_mentions(gold_sentences, tagset, cfg.entity_tag)
    pred = corpus_mentions(pred_sentences, tagset, cfg.entity_tag)
    report = score(gold, pred, cfg.mode)
    print(
        f"{cfg.mode}: tp={report.tp} fp={report.fp} fn={report.fn} "
        f"P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}"
    )
    if cfg.output is not None:
        Path(cfg.output).write_text(
            json.dumps({cfg.mode: report.as_dict()}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def cmd_experiment(args_config: Path, cfg: PipelineConfig) -> int:
    if args_config is None:
        raise ValueError("missing required option --config")
    if not Path(args_config).exists():
        raise FileNotFoundError(f"--config: no such file: {args_config}")
    experiment = ExperimentConfig.from_file(args_config)
    for path in experiment.train + tuple(
        p for spec in experiment.products for p in (spec.test, spec.unlabeled) if p
    ):
        if not Path(path).exists():
            raise FileNotFoundError(f"experiment input missing: {path}")
    result = run_experiment(experiment, cfg.output_dir)
    print(format_table(result), end="")
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig) -> int:
    cfg.require("output_dir")
    data = generate_synthetic(
        cfg.seed,
        SyntheticConfig(
            train_size=cfg.train_size,
            unlabeled_size=cfg.unlabeled_size,
            test_size=cfg.test_size,
        ),
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(data.train, out / "train.tsv")
    save_corpus(data.unlabeled, out / "unlabeled.tsv")
    save_corpus(data.test, out / "test.tsv")
    (out / "meta.json").write_text(
        json.dumps(
            {"seed": cfg.seed, "expansion_test_ids": list(data.expansion_test_ids)},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    log.info(
        "synthetic corpora: %d train / %d unlabeled / %d test -> %s",
        len(data.train), len(data.unlabeled), len(data.test), out,
    )
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage problems are validation failures, not the default argparse exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kcrf", description=__doc__.split("\n", 1)[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", type=Path, help="JSON file supplying any flag")
        p.add_argument("--tags", type=str, help="comma-separated tag set (default ENT,O)")
        p.add_argument("--seed", type=int)
        return p

    p = add("pretrain", cmd_pretrain, "train a CRF on a labeled corpus")
    p.add_argument("--train", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--preset", choices=("basic", "primitive"))
    p.add_argument("--sigma2", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")

    p = add("select", cmd_select, "select knowledge types from a trained model")
    p.add_argument("--model", type=Path)
    p.add_argument("--kb", type=Path, help="output knowledge-base file")
    p.add_argument("--report", type=Path, help="selection report file")
    p.add_argument("--delta", type=float)

    p = add("train", cmd_train, "train the knowledge-preset model against a KB")
    p.add_argument("--train", type=Path)
    p.add_argument("--kb", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--kb-match", choices=("per_tag", "flat"), dest="kb_match")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")

    p = add("expand", cmd_expand, "expand the knowledge base over unlabeled text")
    p.add_argument("--model", type=Path)
    p.add_argument("--kb", type=Path)
    p.add_argument("--unlabeled", type=Path)
    p.add_argument("--out-kb", type=Path, dest="out_kb")
    p.add_argument("--trace", type=Path)
    p.add_argument("--delta-prime", type=float, dest="delta_prime")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--strict", action="store_const", const=True)

    p = add("predict", cmd_predict, "write Viterbi predictions as corpus TSV")
    p.add_argument("--model", type=Path)
    p.add_argument("--kb", type=Path)
    p.add_argument("--input", type=Path)
    p.add_argument("--output", type=Path)

    p = add("eval", cmd_eval, "score predictions against gold mentions")
    p.add_argument("--gold", type=Path)
    p.add_argument("--pred", type=Path)
    p.add_argument("--mode", choices=("exact", "containment"))
    p.add_argument("--entity-tag", dest="entity_tag")
    p.add_argument("--output", type=Path, help="machine-readable report file")

    p = add("experiment", cmd_experiment, "run the four-system comparison")
    p.add_argument("--output-dir", type=Path, dest="output_dir")

    p = add("synth", cmd_synth, "generate the synthetic bootstrap corpora")
    p.add_argument("--output-dir", type=Path, dest="output_dir")
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--unlabeled-size", type=int, dest="unlabeled_size")
    p.add_argument("--test-size", type=int, dest="test_size")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        if args.func is cmd_experiment:
            # --config names the experiment spec here, not a pipeline config
            experiment_config = args.config
            args.config = None
            return cmd_experiment(experiment_config, _merge_config(args))
        return args.func(_merge_config(args))
    except (CorpusError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except TrainingError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
