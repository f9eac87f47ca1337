"""Command line entry point.

Subcommands bind a JSON run configuration to training, evaluation, response
generation, and the ablation sweep.  Relative data paths resolve against the
config file's directory unless the ``SELFOTHER_DATA_ROOT`` environment
variable overrides the root.  Exit codes: 0 success, 2 invalid
configuration, 3 training diverged.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, restore_parameters, save_parameters
from .corpus import (CorpusError, build_vocabulary, default_emotion_labels,
                     load_corpus, load_emotion_labels, load_pretrained_embeddings)
from .knowledge import KnowledgeFormatError, KnowledgeStore
from .network import ModelConfig, ResponderNetwork, VARIANTS
from .training import (HyperParams, TrainingDiverged, evaluate, run_variant, train)

DATA_ROOT_ENV = "SELFOTHER_DATA_ROOT"


class ConfigError(ValueError):
    """The run configuration is malformed or references missing files."""


@dataclasses.dataclass
class RunConfig:
    train_path: Path
    valid_path: Path | None
    test_path: Path | None
    knowledge_path: Path | None
    embeddings_path: Path | None
    labels_path: Path | None
    model: ModelConfig
    hyper: HyperParams
    max_decode_steps: int
    strategy: str
    beam_width: int
    variant: str
    seed: int
    min_freq: int


def _resolve(root: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else root / p


def _require_file(path: Path | None, field: str) -> None:
    if path is not None and not path.is_file():
        raise ConfigError(f"{field}: no such file: {path}")


def load_run_config(path, variant: str | None = None, seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    root = Path(os.environ.get(DATA_ROOT_ENV) or path.parent)

    data = raw.get("data", {})
    if "train" not in data:
        raise ConfigError(f"{path}: data.train is required")
    model_raw = dict(raw.get("model", {}))
    training_raw = dict(raw.get("training", {}))
    generation_raw = dict(raw.get("generation", {}))
    min_freq = int(raw.get("min_freq", 1))
    chosen_variant = variant or raw.get("variant", "full")
    if chosen_variant not in VARIANTS:
        raise ConfigError(f"unknown variant {chosen_variant!r}; expected one of {VARIANTS}")
    chosen_seed = seed if seed is not None else int(raw.get("seed", 0))

    try:
        model = ModelConfig(**model_raw)
        hyper = HyperParams(**training_raw, seed=chosen_seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = RunConfig(
        train_path=_resolve(root, data["train"]),
        valid_path=_resolve(root, data.get("valid")),
        test_path=_resolve(root, data.get("test")),
        knowledge_path=_resolve(root, data.get("knowledge")),
        embeddings_path=_resolve(root, data.get("embeddings")),
        labels_path=_resolve(root, data.get("labels")),
        model=model,
        hyper=hyper,
        max_decode_steps=int(generation_raw.get("max_decode_steps", 30)),
        strategy=str(generation_raw.get("strategy", "greedy")),
        beam_width=int(generation_raw.get("beam_width", 4)),
        variant=chosen_variant,
        seed=chosen_seed,
        min_freq=min_freq,
    )
    _require_file(cfg.train_path, "data.train")
    _require_file(cfg.valid_path, "data.valid")
    _require_file(cfg.test_path, "data.test")
    _require_file(cfg.knowledge_path, "data.knowledge")
    _require_file(cfg.embeddings_path, "data.embeddings")
    _require_file(cfg.labels_path, "data.labels")
    return cfg


@dataclasses.dataclass
class PreparedRun:
    config: RunConfig
    labels: list[str]
    train_samples: list
    valid_samples: list | None
    test_samples: list | None
    vocab: object
    store: KnowledgeStore
    embedding_matrix: np.ndarray | None


def prepare(cfg: RunConfig) -> PreparedRun:
    labels = (load_emotion_labels(cfg.labels_path) if cfg.labels_path
              else default_emotion_labels())
    train_samples = load_corpus(cfg.train_path, labels)
    valid_samples = load_corpus(cfg.valid_path, labels) if cfg.valid_path else None
    test_samples = load_corpus(cfg.test_path, labels) if cfg.test_path else None
    vocab = build_vocabulary(train_samples, min_freq=cfg.min_freq)
    all_samples = list(train_samples)
    for extra in (valid_samples, test_samples):
        if extra:
            all_samples.extend(extra)
    if cfg.knowledge_path:
        store = KnowledgeStore.load(cfg.knowledge_path)
        store.attach_fallback(all_samples, seed=cfg.seed)
        if store.dim != cfg.model.knowledge_dim:
            cfg.model.knowledge_dim = store.dim
    else:
        store = KnowledgeStore.synthetic(all_samples, cfg.model.knowledge_dim, seed=cfg.seed)
    embedding_matrix = None
    if cfg.embeddings_path:
        embedding_matrix = load_pretrained_embeddings(
            cfg.embeddings_path, vocab, cfg.model.hidden_dim, seed=cfg.seed)
    return PreparedRun(cfg, labels, train_samples, valid_samples, test_samples,
                       vocab, store, embedding_matrix)


def _build_network(run: PreparedRun, variant: str | None = None) -> ResponderNetwork:
    cfg = run.config
    return ResponderNetwork(cfg.model, run.vocab, labels=run.labels, store=run.store,
                            variant=variant or cfg.variant, seed=cfg.seed,
                            embedding_matrix=run.embedding_matrix)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_records(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_train(cfg: RunConfig, out_dir: Path) -> int:
    run = prepare(cfg)
    network = _build_network(run)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(network, run.train_samples, cfg.hyper,
                   val_samples=run.valid_samples,
                   log_path=out_dir / "training_log.jsonl")
    save_parameters(network.parameters(), out_dir / "checkpoint.params")
    summary = {"steps": result.steps, "stopped_early": result.stopped_early,
               "best_validation": result.best_validation, "variant": cfg.variant,
               "seed": cfg.seed}
    _write_json(out_dir / "training_summary.json", summary)
    print(f"trained {cfg.variant} for {result.steps} steps -> {out_dir / 'checkpoint.params'}")
    return 0


def _eval_samples(run: PreparedRun):
    return run.test_samples or run.valid_samples or run.train_samples


def cmd_eval(cfg: RunConfig, checkpoint: Path, out_dir: Path) -> int:
    run = prepare(cfg)
    network = _build_network(run)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    restore_parameters(network.parameters(), checkpoint)
    report, records = evaluate(network, _eval_samples(run),
                               max_decode_steps=cfg.max_decode_steps,
                               strategy=cfg.strategy, beam_width=cfg.beam_width)
    _write_json(out_dir / "metrics.json", report.to_dict())
    _write_records(out_dir / "generations.jsonl", records)
    print(f"ppl={report.ppl:.4f} acc={report.emotion_accuracy:.4f} "
          f"dist1={report.dist1 * 100:.2f} dist2={report.dist2 * 100:.2f}")
    return 0


def cmd_generate(cfg: RunConfig, checkpoint: Path, out_dir: Path) -> int:
    run = prepare(cfg)
    network = _build_network(run)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    restore_parameters(network.parameters(), checkpoint)
    records = []
    for s in _eval_samples(run):
        generated = network.generate(s, strategy=cfg.strategy,
                                     max_steps=cfg.max_decode_steps,
                                     beam_width=cfg.beam_width)
        pred = network.labels[network.predict_emotion_index(s)]
        records.append({"id": s.id, "generated": generated,
                        "reference": list(s.response),
                        "predicted_emotion": pred, "gold_emotion": s.emotion})
    _write_records(out_dir / "generations.jsonl", records)
    print(f"wrote {len(records)} generations -> {out_dir / 'generations.jsonl'}")
    return 0


def cmd_ablate(cfg: RunConfig, out_dir: Path) -> int:
    run = prepare(cfg)
    rows = []
    for variant in VARIANTS:
        report, _ = run_variant(
            variant, cfg.model, run.vocab, run.train_samples, cfg.hyper,
            eval_samples=_eval_samples(run), val_samples=run.valid_samples,
            labels=run.labels, store=run.store, embedding_matrix=run.embedding_matrix,
            max_decode_steps=cfg.max_decode_steps)
        row = {"variant": variant, **report.to_dict()}
        rows.append(row)
        print(f"{variant:8s} ppl={report.ppl:10.4f} acc={report.emotion_accuracy:.4f} "
              f"dist1={report.dist1 * 100:.2f} dist2={report.dist2 * 100:.2f}")
    _write_json(out_dir / "ablation.json", rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfother",
        description="Train and evaluate the self-other aware empathetic responder.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_checkpoint in (("train", False), ("eval", True),
                                   ("generate", True), ("ablate", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--variant", default=None, choices=VARIANTS)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True)
        else:
            p.add_argument("--checkpoint", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, variant=args.variant, seed=args.seed)
        out_dir = Path(args.out)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, Path(args.checkpoint), out_dir)
        if args.command == "generate":
            return cmd_generate(cfg, Path(args.checkpoint), out_dir)
        if args.command == "ablate":
            return cmd_ablate(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CorpusError, KnowledgeFormatError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
