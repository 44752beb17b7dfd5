"""Losses, the joint objective, AdamW, the LR schedule, and training regimes.

The objective is classification loss plus lambda times a self-supervised
loss computed on corrupted copies of the same batch texts; lambda = 0 skips
the self-supervised forward pass entirely. Batches are logical: instances
run through the encoder one at a time and their losses are averaged, which
keeps attention free of padding while staying exactly equivalent to a
padded batch under the mean-loss convention.

Three independently seeded rng streams drive (a) batch order, (b) dropout,
and (c) masking/augmentation, so a lambda = 0 run reproduces the
unregularized trajectory bit for bit and regimes differ only where they
must.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .augment import ALL_OPS, AugOp, make_satp_instance, normalize_ops
from .autodiff import Tape, Tensor
from .masking import MaskedInstance, mask_tokens
from .metrics import evaluate_pairs
from .model import (EncoderConfig, ModelParams, classification_head, classification_logits,
                    cls_row, encode, mtp_head, satp_head, use_weight_decay)
from .text import LabeledExample, StopwordSet, SynonymLexicon, Vocab
from .text import encode as encode_ids

log = logging.getLogger("sslreg")

REGIMES = ("unregularized", "ssl_reg_mtp", "ssl_reg_satp", "tapt", "tapt_plus_ssl_reg")
SSL_REGIMES = ("ssl_reg_mtp", "ssl_reg_satp", "tapt_plus_ssl_reg")


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters. Defaults follow the full-scale recipe;
    desk-scale runs override lr_max and epochs (see the shipped configs)."""

    regime: str = "unregularized"
    lambda_: float = 0.0
    lr_max: float = 2e-5
    warmup_proportion: float = 0.06
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    epochs: int = 10
    batch_size: int = 16
    grad_accum_steps: int = 1
    seed: int = 0
    p_mask: float = 0.15
    aug_rate: float = 0.1
    active_ops: tuple[AugOp, ...] = ALL_OPS
    tapt_epochs: int = 10

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        if self.lambda_ > 0 and self.regime not in SSL_REGIMES:
            raise ValueError(
                f"regime {self.regime!r} has no self-supervised branch; lambda must be 0"
            )
        if not 0 <= self.warmup_proportion < 1:
            raise ValueError(f"warmup_proportion must be in [0, 1), got {self.warmup_proportion}")
        if self.lr_max <= 0:
            raise ValueError(f"lr_max must be positive, got {self.lr_max}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0 <= beta < 1:
                raise ValueError(f"{name} must be in [0, 1), got {beta}")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.epochs < 1 or self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ValueError("epochs, batch_size, and grad_accum_steps must all be >= 1")
        if not 0 < self.p_mask < 1:
            raise ValueError(f"p_mask must be in (0, 1), got {self.p_mask}")
        if not 0 < self.aug_rate <= 1:
            raise ValueError(f"aug_rate must be in (0, 1], got {self.aug_rate}")
        if not self.active_ops:
            raise ValueError("active_ops must be non-empty")
        if self.regime in ("tapt", "tapt_plus_ssl_reg") and self.tapt_epochs < 1:
            raise ValueError(f"tapt_epochs must be >= 1, got {self.tapt_epochs}")


def lr_at(step: int, total_steps: int, warmup_proportion: float, lr_max: float) -> float:
    """Linear ramp 0 -> lr_max over the warmup steps, then linear decay to 0.

    Warmup length is round(warmup_proportion * total_steps); the rate is
    exactly lr_max at that step and exactly 0 at total_steps.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if step >= total_steps:
        return 0.0
    warmup_steps = round(total_steps * warmup_proportion)
    if step < warmup_steps:
        return lr_max * step / warmup_steps
    return lr_max * (total_steps - step) / (total_steps - warmup_steps)


class AdamW:
    """Bias-corrected Adam with decoupled weight decay.

    Decay multiplies the parameter directly by (1 - lr * wd), separately
    from the moment-based update; biases and layer-norm parameters are
    exempt. Parameters whose grad buffer is unset are skipped entirely.
    """

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-6, weight_decay: float = 0.1):
        self.tensors: dict[str, Tensor] = params.tensors if hasattr(params, "tensors") else params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {n: np.zeros_like(t.data) for n, t in self.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.tensors.items()}
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, tensor in self.tensors.items():
            g = tensor.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay and use_weight_decay(name):
                tensor.data -= lr * self.weight_decay * tensor.data
            tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _example_ce(params: ModelParams, ids, label, train_mode, tape, rng) -> Tensor:
    logits = classification_logits(params, ids, train_mode, tape, rng)
    return ad.sum_all(ad.cross_entropy(logits, [label], tape), tape)


def _classification_sum(params, items, train_mode, tape, rng) -> Tensor:
    """Sum of per-example classification cross-entropies; items are (ids, label)."""
    losses = [_example_ce(params, ids, label, train_mode, tape, rng) for ids, label in items]
    return losses[0] if len(losses) == 1 else ad.add_n(losses, tape)


def classification_loss(params: ModelParams, items, train_mode: bool = False,
                        tape: Tape | None = None, rng=None) -> Tensor:
    """Mean cross-entropy over a batch of (ids, label) pairs."""
    if not items:
        raise ValueError("classification_loss: empty batch")
    return ad.scale(_classification_sum(params, items, train_mode, tape, rng),
                    1.0 / len(items), tape)


def _mtp_sum(params, instances: Sequence[MaskedInstance], train_mode, tape, rng):
    """(summed CE over every masked position, number of positions); (None, 0) if nothing usable."""
    losses, positions = [], 0
    for inst in instances:
        if inst is None or not inst.mask_positions:
            continue
        hidden = encode(params, inst.input_ids, train_mode, tape, rng)
        logits = mtp_head(params, hidden, inst.mask_positions, tape)
        targets = [inst.target_ids[p] for p in sorted(inst.mask_positions)]
        losses.append(ad.sum_all(ad.cross_entropy(logits, targets, tape), tape))
        positions += len(inst.mask_positions)
    if not losses:
        return None, 0
    total = losses[0] if len(losses) == 1 else ad.add_n(losses, tape)
    return total, positions


def mtp_loss(params: ModelParams, instances: Sequence[MaskedInstance],
             train_mode: bool = False, tape: Tape | None = None, rng=None) -> Tensor | None:
    """Mean cross-entropy over all masked positions in the batch.

    Only masked positions carry loss. A batch where every instance was a
    skip signal contributes nothing and returns None (the caller logs it).
    """
    total, positions = _mtp_sum(params, instances, train_mode, tape, rng)
    if total is None:
        return None
    return ad.scale(total, 1.0 / positions, tape)


def _satp_sum(params, items, train_mode, tape, rng):
    """(summed CE over augmented instances, count); items are (ids, op_label)."""
    losses = []
    for ids, op_label in items:
        if ids is None:
            continue
        hidden = encode(params, ids, train_mode, tape, rng)
        logits = satp_head(params, cls_row(hidden, tape), tape)
        losses.append(ad.sum_all(ad.cross_entropy(logits, [op_label], tape), tape))
    if not losses:
        return None, 0
    total = losses[0] if len(losses) == 1 else ad.add_n(losses, tape)
    return total, len(losses)


def satp_loss(params: ModelParams, items, train_mode: bool = False,
              tape: Tape | None = None, rng=None) -> Tensor | None:
    """Mean cross-entropy of operator-type predictions over the batch."""
    total, count = _satp_sum(params, items, train_mode, tape, rng)
    if total is None:
        return None
    return ad.scale(total, 1.0 / count, tape)


def combine_losses(lc: Tensor, lp: Tensor | None, lambda_: float,
                   tape: Tape | None = None) -> Tensor:
    """total = Lc + lambda * Lp."""
    if lambda_ == 0 or lp is None:
        return lc
    return ad.add(lc, ad.scale(lp, lambda_, tape), tape)


def joint_loss(params: ModelParams, clean_items, ssl_instances, lambda_: float,
               ssl_task: str = "mtp", train_mode: bool = False,
               tape: Tape | None = None, rng=None) -> tuple[Tensor, float, float]:
    """(total, Lc value, Lp value). With lambda = 0 the self-supervised
    branch is not executed at all, not even its forward pass."""
    if lambda_ < 0:
        raise ValueError(f"lambda must be >= 0, got {lambda_}")
    lc = classification_loss(params, clean_items, train_mode, tape, rng)
    if lambda_ == 0:
        return lc, lc.item(), 0.0
    if ssl_task == "mtp":
        lp = mtp_loss(params, ssl_instances, train_mode, tape, rng)
    elif ssl_task == "satp":
        lp = satp_loss(params, ssl_instances, train_mode, tape, rng)
    else:
        raise ValueError(f"unknown ssl_task {ssl_task!r}")
    if lp is None:
        log.warning("joint_loss: every self-supervised instance was skipped; Lp = 0")
        return lc, lc.item(), 0.0
    return combine_losses(lc, lp, lambda_, tape), lc.item(), lp.item()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    loss_c: float
    loss_p: float
    lambda_: float
    train: dict | None = None
    dev: dict | None = None
    test: dict | None = None

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch, "phase": self.phase, "lr": self.lr,
            "loss_c": self.loss_c, "loss_p": self.loss_p, "lambda": self.lambda_,
            "train": self.train, "dev": self.dev, "test": self.test,
        }


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.records)

    def last_with_metrics(self) -> EpochRecord:
        for rec in reversed(self.records):
            if rec.dev is not None:
                return rec
        raise ValueError("history has no evaluated epoch")


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    best_epoch: int
    history: RunHistory


def predict_labels(params: ModelParams, encoded: Sequence[Sequence[int]],
                   threads: int = 1) -> list[int]:
    """Argmax class prediction per sequence; optionally fanned out over threads.

    Evaluation shares the parameters read-only, so threading is safe and
    order-preserving.
    """
    def one(ids):
        hidden = encode(params, ids)
        return int(np.argmax(classification_head(params, cls_row(hidden)).data[0]))

    if threads > 1 and len(encoded) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, encoded))
    return [one(ids) for ids in encoded]


def evaluate_split(params: ModelParams, examples: Sequence[LabeledExample], vocab: Vocab,
                   num_classes: int | None = None, threads: int = 1) -> dict[str, float]:
    encoded = [encode_ids(e.tokens, vocab, params.config.max_len) for e in examples]
    preds = predict_labels(params, encoded, threads)
    return evaluate_pairs([e.label for e in examples], preds,
                          num_classes or params.num_classes)


def _infer_num_classes(*splits) -> int:
    labels = [e.label for split in splits if split for e in split]
    return max(labels) + 1


@dataclass
class _Phase:
    name: str          # "train" | "pretrain" | "finetune"
    epochs: int
    mode: str          # "classification" | "ssl_reg" | "mtp_only"
    ssl_task: str | None = None
    lambda_: float = 0.0


def _phases_for(cfg: TrainConfig) -> list[_Phase]:
    if cfg.regime == "unregularized":
        return [_Phase("train", cfg.epochs, "classification")]
    if cfg.regime == "ssl_reg_mtp":
        return [_Phase("train", cfg.epochs, "ssl_reg", "mtp", cfg.lambda_)]
    if cfg.regime == "ssl_reg_satp":
        return [_Phase("train", cfg.epochs, "ssl_reg", "satp", cfg.lambda_)]
    if cfg.regime == "tapt":
        return [_Phase("pretrain", cfg.tapt_epochs, "mtp_only"),
                _Phase("finetune", cfg.epochs, "classification")]
    # tapt_plus_ssl_reg: pretrain, then regularized finetuning with the MTP task
    return [_Phase("pretrain", cfg.tapt_epochs, "mtp_only"),
            _Phase("finetune", cfg.epochs, "ssl_reg", "mtp", cfg.lambda_)]


def train(
    train_examples: Sequence[LabeledExample],
    dev_examples: Sequence[LabeledExample],
    vocab: Vocab,
    encoder_config: EncoderConfig,
    cfg: TrainConfig,
    *,
    lexicon: SynonymLexicon | None = None,
    stopwords: StopwordSet | None = None,
    test_examples: Sequence[LabeledExample] | None = None,
    dtype=np.float32,
    eval_test_each_epoch: bool = False,
    num_classes: int | None = None,
    eval_threads: int = 1,
) -> TrainResult:
    """Run one training regime end to end.

    Regimes: plain classification; joint classification + self-supervised
    regularization (masked-token or augmentation-type prediction on
    corrupted copies of each batch); sequential pretraining on the
    masked-token task followed by classification with re-initialized heads;
    or the sequential phase followed by regularized finetuning.

    Returns the final parameters, the best-dev-F1 parameters, and per-epoch
    history. Fixed seed gives a bit-identical history on one platform.
    """
    cfg.validate()
    if not train_examples or not dev_examples:
        raise ValueError("train and dev splits must be non-empty")
    if num_classes is None:
        num_classes = _infer_num_classes(train_examples, dev_examples, test_examples)
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    active_ops = normalize_ops(cfg.active_ops)
    stopwords = stopwords if stopwords is not None else StopwordSet(frozenset())

    root = np.random.SeedSequence(cfg.seed)
    init_ss, order_ss, dropout_ss, corrupt_ss, reinit_ss = root.spawn(5)
    init_rng = np.random.default_rng(init_ss)
    order_rng = np.random.default_rng(order_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    corrupt_rng = np.random.default_rng(corrupt_ss)

    params = ModelParams.init(encoder_config, num_classes, len(active_ops), init_rng, dtype)
    log.info("initialized model with %d parameters (%s)", params.num_parameters(), params.dtype)

    max_len = encoder_config.max_len
    encoded = [encode_ids(e.tokens, vocab, max_len) for e in train_examples]
    labels = [e.label for e in train_examples]
    n = len(train_examples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)

    history = RunHistory()
    best_params: ModelParams | None = None
    best_f1 = -1.0
    best_epoch = -1
    epoch_counter = 0

    for phase in _phases_for(cfg):
        if phase.name == "finetune":
            params.reinit_heads(np.random.default_rng(reinit_ss))
        opt = AdamW(params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        total_steps = phase.epochs * steps_per_epoch
        step = 0
        for _ in range(phase.epochs):
            epoch_counter += 1
            lc_sum, lc_count = 0.0, 0
            lp_sum, lp_count = 0.0, 0
            lr = 0.0
            perm = order_rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                batch = perm[start:start + cfg.batch_size]
                lr = lr_at(step, total_steps, cfg.warmup_proportion, cfg.lr_max)

                mtp_instances = satp_items = None
                ssl_positions = 0
                need_mtp = phase.mode == "mtp_only" or (
                    phase.mode == "ssl_reg" and phase.ssl_task == "mtp" and phase.lambda_ > 0)
                need_satp = (phase.mode == "ssl_reg" and phase.ssl_task == "satp"
                             and phase.lambda_ > 0)
                if need_mtp:
                    mtp_instances = [mask_tokens(encoded[i], cfg.p_mask, vocab, corrupt_rng)
                                     for i in batch]
                    ssl_positions = sum(len(m.mask_positions) for m in mtp_instances
                                        if m is not None)
                if need_satp:
                    satp_items = []
                    for i in batch:
                        inst = make_satp_instance(train_examples[i].tokens, active_ops,
                                                  lexicon, stopwords, cfg.aug_rate, corrupt_rng)
                        if inst is None:
                            satp_items.append((None, -1))
                        else:
                            satp_items.append((encode_ids(inst.tokens, vocab, max_len),
                                               inst.op_label))
                    ssl_positions = sum(1 for ids, _ in satp_items if ids is not None)
                if (need_mtp or need_satp) and ssl_positions == 0:
                    log.warning("every self-supervised instance in a batch was skipped")

                chunks = [c for c in np.array_split(np.arange(len(batch)), cfg.grad_accum_steps)
                          if len(c)]
                for chunk in chunks:
                    tape = Tape()
                    parts = []
                    if phase.mode != "mtp_only":
                        cls_items = [(encoded[batch[j]], labels[batch[j]]) for j in chunk]
                        csum = _classification_sum(params, cls_items, True, tape, dropout_rng)
                        lc_sum += csum.item()
                        parts.append(ad.scale(csum, 1.0 / len(batch), tape))
                    if need_mtp and ssl_positions:
                        msum, _ = _mtp_sum(params, [mtp_instances[j] for j in chunk],
                                           True, tape, dropout_rng)
                        if msum is not None:
                            lp_sum += msum.item()
                            weight = (1.0 if phase.mode == "mtp_only" else phase.lambda_)
                            parts.append(ad.scale(msum, weight / ssl_positions, tape))
                    if need_satp and ssl_positions:
                        ssum, _ = _satp_sum(params, [satp_items[j] for j in chunk],
                                            True, tape, dropout_rng)
                        if ssum is not None:
                            lp_sum += ssum.item()
                            parts.append(ad.scale(ssum, phase.lambda_ / ssl_positions, tape))
                    if not parts:
                        continue
                    loss = parts[0] if len(parts) == 1 else ad.add_n(parts, tape)
                    tape.backward(loss)
                lc_count += len(batch) if phase.mode != "mtp_only" else 0
                lp_count += ssl_positions
                opt.step(lr)
                params.zero_grads()
                step += 1

            loss_c = lc_sum / lc_count if lc_count else 0.0
            loss_p = lp_sum / lp_count if lp_count else 0.0
            train_m = dev_m = test_m = None
            if phase.mode != "mtp_only":
                train_m = evaluate_split(params, train_examples, vocab, num_classes, eval_threads)
                dev_m = evaluate_split(params, dev_examples, vocab, num_classes, eval_threads)
                if eval_test_each_epoch and test_examples:
                    test_m = evaluate_split(params, test_examples, vocab, num_classes,
                                            eval_threads)
                if dev_m["macro_f1"] > best_f1:
                    best_f1 = dev_m["macro_f1"]
                    best_params = params.clone()
                    best_epoch = epoch_counter
            record = EpochRecord(epoch_counter, phase.name, lr, loss_c, loss_p,
                                 phase.lambda_ if phase.mode == "ssl_reg" else 0.0,
                                 train_m, dev_m, test_m)
            history.records.append(record)
            log.info("epoch %d (%s): lr %.2e loss_c %.4f loss_p %.4f dev %s",
                     epoch_counter, phase.name, lr, loss_c, loss_p,
                     None if dev_m is None else round(dev_m["macro_f1"], 4))

    assert best_params is not None
    return TrainResult(params, best_params, best_epoch, history)
