"""Command-line interface.

Subcommands: gen, train, evaluate, augment, mask, sweep, gradcheck.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import make_satp_instance, normalize_ops
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .masking import mask_tokens
from .model import EncoderConfig, ModelParams
from .runner import eval_threads, run_experiment, run_sweep
from .synthetic import gen_synthetic
from .text import (CorpusError, build_vocab, default_stopwords, load_corpus,
                   load_lexicon, load_stopwords)
from .training import evaluate_split, joint_loss, TrainConfig
from .masking import MaskedInstance


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--precision", type=int, choices=(32, 64), default=None,
                   help="float precision for model parameters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sslreg",
        description="Train and probe text classifiers regularized by a "
                    "self-supervised auxiliary loss.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic classification dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-train", type=int, default=500)
    p.add_argument("--num-dev", type=int, default=200)
    p.add_argument("--num-test", type=int, default=1000)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--vocab-size", type=int, default=120)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run one configured experiment")
    p.add_argument("--config", required=True)
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint, printing a JSON metrics object")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")

    p = sub.add_parser("augment", help="stream augmented copies of a corpus as JSON lines")
    p.add_argument("--input", required=True, help="corpus file (<label>\\t<text> lines)")
    p.add_argument("--lexicon", default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--ops", default="SR,RI,RS,RD", help="comma-separated operator subset")
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None, help="stop after this many lines")
    p.add_argument("--stats", action="store_true", help="print an empirical rate report instead")

    p = sub.add_parser("mask", help="stream masked-token instances as JSON lines")
    p.add_argument("--input", required=True)
    p.add_argument("--p-mask", type=float, default=0.15)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--stats", action="store_true",
                   help="print selection-rate and branch-proportion report instead")

    p = sub.add_parser("sweep", help="run the config once per regularization weight")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", required=True, help="comma-separated values, e.g. 0.01,0.1,1.0")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check on a small random model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--precision", type=int, choices=(32, 64), default=64)
    return parser


def _cmd_gen(args) -> int:
    paths = gen_synthetic(args.out, args.num_train, args.num_dev, args.num_test,
                          args.num_classes, args.vocab_size, args.noise, args.seed)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or f"runs/{cfg.run_name}"
    metrics = run_experiment(cfg, out_dir, seed=args.seed, precision=args.precision)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    cfg.validate()
    from .runner import load_data

    data = load_data(cfg)
    params = load_checkpoint(args.checkpoint)
    if params.config.vocab_size != len(data.vocab):
        raise CheckpointError(
            f"checkpoint vocab size {params.config.vocab_size} does not match the "
            f"{len(data.vocab)}-word vocabulary built from {cfg.train_path}"
        )
    split = {"train": data.train, "dev": data.dev, "test": data.test}[args.split]
    if split is None:
        raise ConfigError(f"config has no {args.split}_path")
    metrics = evaluate_split(params, split, data.vocab, data.num_classes, eval_threads())
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_augment(args) -> int:
    examples = load_corpus(args.input)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    stopwords = load_stopwords(args.stopwords) if args.stopwords else default_stopwords()
    ops = normalize_ops(args.ops.split(","))
    rng = np.random.default_rng(args.seed)
    counts = {op.name: 0 for op in ops}
    skipped = 0
    length_delta = []
    n = 0
    for example in examples:
        if args.limit is not None and n >= args.limit:
            break
        n += 1
        inst = make_satp_instance(example.tokens, ops, lexicon, stopwords, args.rate, rng)
        if inst is None:
            skipped += 1
            continue
        op_name = ops[inst.op_label].name
        counts[op_name] += 1
        length_delta.append(len(inst.tokens) - len(example.tokens))
        if not args.stats:
            print(json.dumps({"tokens": list(inst.tokens), "op": op_name}))
    if args.stats:
        total = max(1, sum(counts.values()))
        report = {
            "examples": n,
            "skipped": skipped,
            "op_fractions": {k: v / total for k, v in counts.items()},
            "mean_length_delta": float(np.mean(length_delta)) if length_delta else 0.0,
            "rate": args.rate,
        }
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_mask(args) -> int:
    examples = load_corpus(args.input)
    vocab = build_vocab([list(e.tokens) for e in examples])
    rng = np.random.default_rng(args.seed)
    from .text import encode as encode_ids

    maskable_total = 0
    selected_total = 0
    branch = {"mask": 0, "random": 0, "keep": 0}
    n = 0
    for example in examples:
        if args.limit is not None and n >= args.limit:
            break
        n += 1
        ids = encode_ids(example.tokens, vocab, args.max_len)
        inst = mask_tokens(ids, args.p_mask, vocab, rng)
        if inst is None:
            continue
        maskable_total += len(ids) - 1
        selected_total += len(inst.mask_positions)
        for pos in inst.mask_positions:
            got = inst.input_ids[pos]
            if got == vocab.mask_id:
                branch["mask"] += 1
            elif got == inst.target_ids[pos]:
                branch["keep"] += 1
            else:
                branch["random"] += 1
        if not args.stats:
            print(json.dumps({
                "input_ids": list(inst.input_ids),
                "target_ids": list(inst.target_ids),
                "mask_positions": list(inst.mask_positions),
            }))
    if args.stats:
        total_selected = max(1, selected_total)
        report = {
            "examples": n,
            "maskable_tokens": maskable_total,
            "selected_fraction": selected_total / max(1, maskable_total),
            "branch_proportions": {k: v / total_selected for k, v in branch.items()},
            "p_mask": args.p_mask,
        }
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    try:
        lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"could not parse --lambdas {args.lambdas!r}") from None
    out_dir = args.out or f"runs/{cfg.run_name}_sweep"
    rows = run_sweep(cfg, lambdas, out_dir, seed=args.seed, precision=args.precision)
    print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    if args.precision != 64:
        print("gradcheck requires --precision 64", file=sys.stderr)
        return 2
    rng = np.random.default_rng(args.seed)
    vocab_size, num_classes, num_ops, seq_len = 30, 3, 4, 8
    config = EncoderConfig(vocab_size=vocab_size, num_layers=2, num_heads=2,
                           d_model=16, d_ff=32, max_len=16, dropout=0.0)
    params = ModelParams.init(config, num_classes, num_ops, rng, np.float64)
    ids = [2] + [int(rng.integers(5, vocab_size)) for _ in range(seq_len - 1)]
    label = int(rng.integers(num_classes))
    masked = MaskedInstance(
        tuple([2] + [3] * 2 + ids[3:]), tuple(ids), (1, 2))

    def loss_fn(tape):
        total, _, _ = joint_loss(params, [(ids, label)], [masked], 0.5, "mtp", False, tape)
        return total

    report = ad.grad_check(loss_fn, params.tensors, tol=args.tol,
                           num_samples=args.samples, rng=rng)
    print(report.format())
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "gen": _cmd_gen, "train": _cmd_train, "evaluate": _cmd_evaluate,
        "augment": _cmd_augment, "mask": _cmd_mask, "sweep": _cmd_sweep,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, CorpusError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
