"""Config-driven experiment execution and artifact persistence.

A run writes history.jsonl, the best-dev checkpoint, and metrics.json into
its output directory. Every artifact is written atomically (temp file +
rename), and a run is a pure function of (config, input files, seed) at
fixed precision and platform.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_to_dict
from .metrics import macro_f1_pairs
from .model import ModelParams
from .text import (LabeledExample, StopwordSet, Vocab, build_vocab, default_stopwords,
                   load_corpus, load_lexicon, load_stopwords)
from .training import RunHistory, TrainConfig, evaluate_split, train
from .checkpoint import save_checkpoint

log = logging.getLogger("sslreg")


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def eval_threads() -> int:
    """Evaluation parallelism, capped by the SSLREG_THREADS env var (default 1)."""
    raw = os.environ.get("SSLREG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer SSLREG_THREADS=%r", raw)
        return 1


@dataclasses.dataclass
class LoadedData:
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample] | None
    vocab: Vocab
    lexicon: object | None
    stopwords: StopwordSet
    num_classes: int


def load_data(cfg: ExperimentConfig) -> LoadedData:
    train_examples = load_corpus(cfg.train_path)
    dev_examples = load_corpus(cfg.dev_path)
    test_examples = load_corpus(cfg.test_path) if cfg.test_path else None
    vocab = build_vocab([list(e.tokens) for e in train_examples], cfg.min_freq)
    lexicon = load_lexicon(cfg.lexicon_path) if cfg.lexicon_path else None
    stopwords = load_stopwords(cfg.stopwords_path) if cfg.stopwords_path else default_stopwords()
    labels = [e.label for split in (train_examples, dev_examples, test_examples or [])
              for e in split]
    num_classes = max(labels) + 1
    if num_classes < 2:
        raise ConfigError("corpus has a single class; nothing to classify")
    if cfg.regime == "ssl_reg_satp" and lexicon is None and \
            any(op in cfg.active_ops for op in ("SR", "RI")):
        raise ConfigError("regime ssl_reg_satp with SR/RI active needs a lexicon_path")
    return LoadedData(train_examples, dev_examples, test_examples, vocab, lexicon,
                      stopwords, num_classes)


def _with_overrides(cfg: ExperimentConfig, seed=None, precision=None) -> ExperimentConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if precision is not None:
        updates["precision"] = precision
    return dataclasses.replace(cfg, **updates) if updates else cfg


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, *,
                   seed: int | None = None, precision: int | None = None) -> dict:
    """Execute one configured run; returns the metrics.json payload.

    Artifacts: history.jsonl (one JSON object per epoch), checkpoint.bin
    (best-dev parameters), metrics.json (final-model and best-dev metrics
    plus the macro-F1 train-test gap of the final model), and
    config_resolved.json.
    """
    cfg = _with_overrides(cfg, seed, precision)
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    dtype = np.float64 if cfg.precision == 64 else np.float32
    threads = eval_threads()

    result = train(
        data.train, data.dev, data.vocab,
        cfg.to_encoder_config(len(data.vocab)), cfg.to_train_config(),
        lexicon=data.lexicon, stopwords=data.stopwords, test_examples=data.test,
        dtype=dtype, eval_test_each_epoch=cfg.eval_test_each_epoch,
        num_classes=data.num_classes, eval_threads=threads,
    )

    save_checkpoint(out_dir / "checkpoint.bin", result.best_params)
    atomic_write_text(out_dir / "history.jsonl", result.history.to_jsonl())

    def split_metrics(params: ModelParams) -> dict:
        out = {
            "train": evaluate_split(params, data.train, data.vocab, data.num_classes, threads),
            "dev": evaluate_split(params, data.dev, data.vocab, data.num_classes, threads),
        }
        if data.test:
            out["test"] = evaluate_split(params, data.test, data.vocab,
                                         data.num_classes, threads)
        return out

    final = split_metrics(result.params)
    best = split_metrics(result.best_params)
    metrics = {
        "lambda": cfg.lambda_,
        "seed": cfg.seed,
        "best_epoch": result.best_epoch,
        "final": final,
        "best_dev": best,
    }
    if data.test:
        metrics["gap_final"] = {
            "metric": "macro_f1",
            "train": final["train"]["macro_f1"],
            "test": final["test"]["macro_f1"],
            "difference": final["train"]["macro_f1"] - final["test"]["macro_f1"],
        }
    atomic_write_json(out_dir / "metrics.json", metrics)

    resolved = config_to_dict(cfg)
    resolved["vocab_size"] = len(data.vocab)
    resolved["num_classes"] = data.num_classes
    atomic_write_json(out_dir / "config_resolved.json", resolved)
    return metrics


def run_sweep(cfg: ExperimentConfig, lambdas: list[float], out_dir: str | Path, *,
              seed: int | None = None, precision: int | None = None) -> list[dict]:
    """Run the config once per tradeoff value, sharing the seed.

    Writes sweep_summary.json with one row per value: the best-dev macro-F1
    and the final-model train-test gap.
    """
    if not lambdas:
        raise ConfigError("sweep needs at least one lambda value")
    if len(set(lambdas)) != len(lambdas):
        raise ConfigError(f"duplicate lambda values in sweep: {lambdas}")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError("lambda values must be >= 0")
    if cfg.regime not in ("ssl_reg_mtp", "ssl_reg_satp", "tapt_plus_ssl_reg"):
        raise ConfigError(f"sweep needs a regime with a self-supervised branch, got {cfg.regime!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for lam in lambdas:
        run_cfg = dataclasses.replace(cfg, lambda_=lam)
        run_dir = out_dir / f"lambda_{lam:g}"
        log.info("sweep: lambda=%g -> %s", lam, run_dir)
        metrics = run_experiment(run_cfg, run_dir, seed=seed, precision=precision)
        row = {
            "lambda": lam,
            "dev_metric": metrics["best_dev"]["dev"]["macro_f1"],
        }
        if "gap_final" in metrics:
            row["train_test_gap"] = metrics["gap_final"]["difference"]
        rows.append(row)
    atomic_write_json(out_dir / "sweep_summary.json", rows)
    return rows
