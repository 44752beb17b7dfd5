"""Transformer text encoder with classification, masked-token, and
augmentation-type heads.

The encoder is a stack of post-norm blocks: multi-head scaled dot-product
self-attention and a position-wise feed-forward net, each wrapped in a
residual connection followed by layer normalization. All three heads read
the same encoder tensors by identity, so gradients from any task flow into
the shared representation.

Sequences are processed one at a time (no padding, no attention masks);
batching happens at the loss level by averaging per-instance losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 6:
            raise ValueError(f"vocab_size must cover the 5 specials plus a word, got {self.vocab_size}")
        if self.num_layers < 0:
            raise ValueError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.d_model % max(self.num_heads, 1) != 0 or self.num_heads < 1:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.max_len < 2:
            raise ValueError(f"max_len must be >= 2, got {self.max_len}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until everything lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return out.astype(dtype)


_HEAD_PREFIX = "head."


class ModelParams:
    """Named weight tensors for the encoder and its three task heads."""

    def __init__(self, config: EncoderConfig, num_classes: int, num_aug_ops: int,
                 tensors: dict[str, Tensor]):
        self.config = config
        self.num_classes = num_classes
        self.num_aug_ops = num_aug_ops
        self.tensors = tensors

    @classmethod
    def init(cls, config: EncoderConfig, num_classes: int, num_aug_ops: int,
             rng: np.random.Generator, dtype=np.float32) -> "ModelParams":
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        if num_aug_ops < 1:
            raise ValueError(f"num_aug_ops must be >= 1, got {num_aug_ops}")
        tensors: dict[str, Tensor] = {}

        def weight(name, shape):
            tensors[name] = Tensor(_truncated_normal(rng, shape, 0.02, dtype), name=name)

        def zeros(name, shape):
            tensors[name] = Tensor(np.zeros(shape, dtype=dtype), name=name)

        def ones(name, shape):
            tensors[name] = Tensor(np.ones(shape, dtype=dtype), name=name)

        d, ff = config.d_model, config.d_ff
        weight("tok_emb", (config.vocab_size, d))
        weight("pos_emb", (config.max_len, d))
        for i in range(config.num_layers):
            for proj in ("wq", "wk", "wv", "wo"):
                weight(f"layers.{i}.attn.{proj}", (d, d))
            for bias in ("bq", "bk", "bv", "bo"):
                zeros(f"layers.{i}.attn.{bias}", (d,))
            weight(f"layers.{i}.ffn.w1", (d, ff))
            zeros(f"layers.{i}.ffn.b1", (ff,))
            weight(f"layers.{i}.ffn.w2", (ff, d))
            zeros(f"layers.{i}.ffn.b2", (d,))
            for ln in ("ln1", "ln2"):
                ones(f"layers.{i}.{ln}.g", (d,))
                zeros(f"layers.{i}.{ln}.b", (d,))
        cls._init_heads(tensors, config, num_classes, num_aug_ops, rng, dtype)
        return cls(config, num_classes, num_aug_ops, tensors)

    @staticmethod
    def _init_heads(tensors, config, num_classes, num_aug_ops, rng, dtype):
        d = config.d_model

        def weight(name, shape):
            tensors[name] = Tensor(_truncated_normal(rng, shape, 0.02, dtype), name=name)

        def zeros(name, shape):
            tensors[name] = Tensor(np.zeros(shape, dtype=dtype), name=name)

        weight("head.cls.w1", (d, d))
        zeros("head.cls.b1", (d,))
        weight("head.cls.w2", (d, num_classes))
        zeros("head.cls.b2", (num_classes,))
        weight("head.mtp.w", (d, config.vocab_size))
        zeros("head.mtp.b", (config.vocab_size,))
        weight("head.satp.w1", (d, d))
        zeros("head.satp.b1", (d,))
        weight("head.satp.w2", (d, num_aug_ops))
        zeros("head.satp.b2", (num_aug_ops,))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def reinit_heads(self, rng: np.random.Generator) -> None:
        """Redraw all head tensors, keeping the encoder."""
        fresh: dict[str, Tensor] = {}
        ModelParams._init_heads(fresh, self.config, self.num_classes, self.num_aug_ops,
                                rng, self.dtype)
        self.tensors.update(fresh)

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config, self.num_classes, self.num_aug_ops,
            {n: Tensor(t.data.astype(dtype), name=n) for n, t in self.tensors.items()},
        )

    def clone(self) -> "ModelParams":
        return ModelParams(
            self.config, self.num_classes, self.num_aug_ops,
            {n: Tensor(t.data.copy(), name=n) for n, t in self.tensors.items()},
        )


def use_weight_decay(name: str) -> bool:
    """Weight matrices and embeddings decay; biases and layer-norm params do not."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf.startswith("b") or leaf == "g")


def self_attention(
    params: ModelParams,
    layer: int,
    h: Tensor,
    train_mode: bool = False,
    tape: Tape | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head scaled dot-product self-attention for one layer."""
    cfg = params.config
    p = f"layers.{layer}.attn"
    q = ad.add(ad.matmul(h, params[f"{p}.wq"], tape), params[f"{p}.bq"], tape)
    k = ad.add(ad.matmul(h, params[f"{p}.wk"], tape), params[f"{p}.bk"], tape)
    v = ad.add(ad.matmul(h, params[f"{p}.wv"], tape), params[f"{p}.bv"], tape)
    inv_scale = 1.0 / math.sqrt(cfg.head_dim)
    heads = []
    for i in range(cfg.num_heads):
        lo, hi = i * cfg.head_dim, (i + 1) * cfg.head_dim
        qs = ad.slice_cols(q, lo, hi, tape)
        ks = ad.slice_cols(k, lo, hi, tape)
        vs = ad.slice_cols(v, lo, hi, tape)
        scores = ad.scale(ad.matmul(qs, ad.transpose(ks, tape), tape), inv_scale, tape)
        probs = ad.softmax(scores, tape)
        if train_mode and cfg.dropout > 0:
            probs = ad.dropout(probs, cfg.dropout, dropout_rng, tape)
        heads.append(ad.matmul(probs, vs, tape))
    ctx = heads[0] if len(heads) == 1 else ad.concat_cols(heads, tape)
    return ad.add(ad.matmul(ctx, params[f"{p}.wo"], tape), params[f"{p}.bo"], tape)


def feed_forward(
    params: ModelParams,
    layer: int,
    h: Tensor,
    train_mode: bool = False,
    tape: Tape | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    cfg = params.config
    p = f"layers.{layer}.ffn"
    a = ad.gelu(ad.add(ad.matmul(h, params[f"{p}.w1"], tape), params[f"{p}.b1"], tape), tape)
    if train_mode and cfg.dropout > 0:
        a = ad.dropout(a, cfg.dropout, dropout_rng, tape)
    return ad.add(ad.matmul(a, params[f"{p}.w2"], tape), params[f"{p}.b2"], tape)


def encode(
    params: ModelParams,
    ids: Sequence[int],
    train_mode: bool = False,
    tape: Tape | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Hidden states, shape [len(ids), d_model].

    Dropout hits attention weights and the feed-forward activation, only in
    train mode. Both the supervised and the self-supervised forward passes
    run with the same train-mode behaviour.
    """
    cfg = params.config
    if not 1 <= len(ids) <= cfg.max_len:
        raise ValueError(f"encode: sequence length {len(ids)} outside [1, {cfg.max_len}]")
    if train_mode and cfg.dropout > 0 and dropout_rng is None:
        raise ValueError("encode: train_mode with dropout needs a dropout_rng")
    tok = ad.embedding_lookup(params["tok_emb"], ids, tape)
    pos = ad.embedding_lookup(params["pos_emb"], range(len(ids)), tape)
    h = ad.add(tok, pos, tape)
    for i in range(cfg.num_layers):
        attn = self_attention(params, i, h, train_mode, tape, dropout_rng)
        h = ad.layer_norm(ad.add(h, attn, tape),
                          params[f"layers.{i}.ln1.g"], params[f"layers.{i}.ln1.b"],
                          LN_EPS, tape)
        ffn = feed_forward(params, i, h, train_mode, tape, dropout_rng)
        h = ad.layer_norm(ad.add(h, ffn, tape),
                          params[f"layers.{i}.ln2.g"], params[f"layers.{i}.ln2.b"],
                          LN_EPS, tape)
    return h


def classification_head(params: ModelParams, h_cls: Tensor, tape: Tape | None = None) -> Tensor:
    """Class logits from the CLS representation: W2 tanh(W1 h + b1) + b2."""
    hidden = ad.tanh(ad.add(ad.matmul(h_cls, params["head.cls.w1"], tape),
                            params["head.cls.b1"], tape), tape)
    return ad.add(ad.matmul(hidden, params["head.cls.w2"], tape), params["head.cls.b2"], tape)


def satp_head(params: ModelParams, h_cls: Tensor, tape: Tape | None = None) -> Tensor:
    """Augmentation-operator logits from the CLS representation."""
    hidden = ad.tanh(ad.add(ad.matmul(h_cls, params["head.satp.w1"], tape),
                            params["head.satp.b1"], tape), tape)
    return ad.add(ad.matmul(hidden, params["head.satp.w2"], tape), params["head.satp.b2"], tape)


def mtp_head(params: ModelParams, hidden: Tensor, mask_positions: Sequence[int],
             tape: Tape | None = None) -> Tensor:
    """Vocabulary logits for each masked position, in position order."""
    positions = sorted(int(p) for p in mask_positions)
    if not positions:
        raise ValueError("mtp_head: mask_positions must be non-empty")
    rows = ad.gather_rows(hidden, positions, tape)
    return ad.add(ad.matmul(rows, params["head.mtp.w"], tape), params["head.mtp.b"], tape)


def cls_row(hidden: Tensor, tape: Tape | None = None) -> Tensor:
    """Row 0 of the encoder output as a [1, d_model] tensor."""
    return ad.gather_rows(hidden, [0], tape)


def classification_logits(
    params: ModelParams,
    ids: Sequence[int],
    train_mode: bool = False,
    tape: Tape | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    h = encode(params, ids, train_mode, tape, dropout_rng)
    return classification_head(params, cls_row(h, tape), tape)


def predict_label(params: ModelParams, ids: Sequence[int]) -> int:
    logits = classification_logits(params, ids)
    return int(np.argmax(logits.data[0]))
