"""Dense tensors with tape-based reverse-mode automatic differentiation.

Forward ops compute with numpy and, when given a Tape, append a backward
closure to it. Tape.backward() replays the closures in reverse recording
order -- a valid reverse topological order, since an op's inputs always
exist before its output -- accumulating gradients additively into each
input's ``grad`` buffer. Passing tape=None runs the pure forward math,
which is how evaluation avoids autodiff overhead.

Training runs in float32; gradient verification against finite differences
needs float64 (float32 finite differences are dominated by rounding noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse, e.g. backward() twice without reset()."""


class Tensor:
    """A numpy array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _grad_buffer(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} dtype={self.dtype}>"


@dataclass
class TapeRecord:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of forward ops; recording order is topological."""

    def __init__(self):
        self._records: list[TapeRecord] = []
        self._spent = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append(TapeRecord(output, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate grad buffers of everything ``loss`` depends on.

        Gradients accumulate additively, both across multiple uses of a
        tensor within this tape and across backward calls on other tapes
        (the basis of gradient accumulation). Ops whose output does not
        reach the loss are skipped.
        """
        if self._spent:
            raise TapeError("backward() already ran on this tape; call reset() first")
        if not self._records:
            raise TapeError("backward() on an empty tape")
        if loss.shape != ():
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        loss._grad_buffer()[...] += 1.0
        for rec in reversed(self._records):
            if rec.output.grad is None:
                continue
            rec.backward_fn(rec.output.grad)
        self._spent = True

    def reset(self) -> None:
        self._records.clear()
        self._spent = False


def _finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in output")
    return arr


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(_finite("matmul", a.data @ b.data))
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g @ b.data.T
            b._grad_buffer()[...] += a.data.T @ g
        tape.record(out, (a, b), backward)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise add; also broadcasts a 1-D bias over the rows of a matrix."""
    if a.shape == b.shape:
        out = Tensor(_finite("add", a.data + b.data))
        if tape is not None:
            def backward(g):
                a._grad_buffer()[...] += g
                b._grad_buffer()[...] += g
            tape.record(out, (a, b), backward)
        return out
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(_finite("add", a.data + b.data))
        if tape is not None:
            def backward(g):
                a._grad_buffer()[...] += g
                b._grad_buffer()[...] += g.sum(axis=0)
            tape.record(out, (a, b), backward)
        return out
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def add_n(tensors: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Sum of same-shaped tensors."""
    if not tensors:
        raise ValueError("add_n: empty input")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n: mixed shapes {shape} and {t.shape}")
    out = Tensor(_finite("add_n", sum(t.data for t in tensors)))
    if tape is not None:
        def backward(g):
            for t in tensors:
                t._grad_buffer()[...] += g
        tape.record(out, tuple(tensors), backward)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(_finite("mul", a.data * b.data))
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g * b.data
            b._grad_buffer()[...] += g * a.data
        tape.record(out, (a, b), backward)
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(_finite("scale", a.data * c))
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g * c
        tape.record(out, (a,), backward)
    return out


def transpose(a: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    out = Tensor(a.data.T.copy())
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g.T
        tape.record(out, (a,), backward)
    return out


def softmax(a: Tensor, tape: Tape | None = None, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = _finite("softmax", e / e.sum(axis=axis, keepdims=True))
    out = Tensor(s)
    if tape is not None:
        def backward(g):
            inner = (g * s).sum(axis=axis, keepdims=True)
            a._grad_buffer()[...] += s * (g - inner)
        tape.record(out, (a,), backward)
    return out


def layer_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, tape: Tape | None = None
) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(_finite("layer_norm", xhat * gamma.data + beta.data))
    if tape is not None:
        def backward(g):
            gamma._grad_buffer()[...] += (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
            beta._grad_buffer()[...] += g.sum(axis=tuple(range(g.ndim - 1)))
            dxhat = g * gamma.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._grad_buffer()[...] += inv_std * term
        tape.record(out, (x, gamma, beta), backward)
    return out


def tanh(a: Tensor, tape: Tape | None = None) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g * (1.0 - y * y)
        tape.record(out, (a,), backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor, tape: Tape | None = None) -> Tensor:
    """GELU activation (tanh approximation)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(_finite("gelu", 0.5 * x * (1.0 + t)))
    if tape is not None:
        def backward(g):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._grad_buffer()[...] += g * deriv
        tape.record(out, (a,), backward)
    return out


def embedding_lookup(table: Tensor, ids: Sequence[int], tape: Tape | None = None) -> Tensor:
    """Gather rows of ``table``; the gradient scatter-adds back into them."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1 or table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table {table.shape}, ids shape {idx.shape}")
    if idx.size == 0:
        raise ValueError("embedding_lookup: empty id list")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ValueError(f"embedding_lookup: id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[idx])
    if tape is not None:
        def backward(g):
            np.add.at(table._grad_buffer(), idx, g)
        tape.record(out, (table,), backward)
    return out


# Row selection from activations is the same gather as an embedding lookup.
gather_rows = embedding_lookup


def slice_cols(a: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")
    out = Tensor(a.data[:, start:stop].copy())
    if tape is not None:
        def backward(g):
            a._grad_buffer()[:, start:stop] += g
        tape.record(out, (a,), backward)
    return out


def concat_cols(tensors: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    if not tensors:
        raise ValueError("concat_cols: empty input")
    widths = [t.shape[1] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    if tape is not None:
        def backward(g):
            offset = 0
            for t, w in zip(tensors, widths):
                t._grad_buffer()[...] += g[:, offset:offset + w]
                offset += w
        tape.record(out, tuple(tensors), backward)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator, tape: Tape | None = None) -> Tensor:
    """Inverted dropout; identity when rate == 0 (no rng draw)."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    out = Tensor(a.data * mask)
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g * mask
        tape.record(out, (a,), backward)
    return out


def cross_entropy(logits: Tensor, target, tape: Tape | None = None) -> Tensor:
    """-log softmax(logits)[target].

    1-D logits + integer target -> scalar; 2-D logits + target vector ->
    per-row losses of shape (n,).
    """
    if logits.data.ndim == 1:
        targets = np.asarray([int(target)], dtype=np.intp)
        rows = logits.data[None, :]
        squeeze = True
    elif logits.data.ndim == 2:
        targets = np.asarray(target, dtype=np.intp)
        if targets.shape != (logits.shape[0],):
            raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
        rows = logits.data
        squeeze = False
    else:
        raise ShapeError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    if targets.min() < 0 or targets.max() >= rows.shape[1]:
        raise ValueError("cross_entropy: target index out of range")

    m = rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(rows - m).sum(axis=1))
    picked = rows[np.arange(rows.shape[0]), targets]
    losses = _finite("cross_entropy", lse - picked)
    out = Tensor(losses[0].reshape(()) if squeeze else losses)
    if tape is not None:
        probs = np.exp(rows - lse[:, None])
        def backward(g):
            gg = np.atleast_1d(g)
            d = probs * gg[:, None]
            d[np.arange(rows.shape[0]), targets] -= gg
            logits._grad_buffer()[...] += d[0] if logits.data.ndim == 1 else d
        tape.record(out, (logits,), backward)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype).reshape(()))
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g
        tape.record(out, (a,), backward)
    return out


def mean_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ValueError("mean_all: empty tensor")
    out = Tensor(np.asarray(a.data.mean(), dtype=a.dtype).reshape(()))
    if tape is not None:
        def backward(g):
            a._grad_buffer()[...] += g / n
        tape.record(out, (a,), backward)
    return out


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    max_rel_error: float
    mean_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self, k: int = 5) -> list[GradCheckEntry]:
        return sorted(self.entries, key=lambda e: -e.rel_error)[:k]

    def format(self) -> str:
        lines = [
            f"sampled {len(self.entries)} parameters: "
            f"max rel err {self.max_rel_error:.3e}, mean {self.mean_rel_error:.3e}, "
            f"tol {self.tol:.1e} -> {'PASS' if self.passed else 'FAIL'}"
        ]
        for e in self.worst(3):
            lines.append(
                f"  {e.name}[{e.index}]: analytic {e.analytic:+.6e} "
                f"numeric {e.numeric:+.6e} rel {e.rel_error:.3e}"
            )
        return "\n".join(lines)


def grad_check(
    f: Callable[[Tape | None], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-5,
    num_samples: int = 100,
    rng: np.random.Generator | None = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f(tape)`` must rebuild its graph on each call and return a scalar loss.
    One taped call produces the analytic gradients; then ``num_samples``
    randomly sampled parameter elements are perturbed by ±h with tape=None
    for the (f(w+h) - f(w-h)) / 2h quotient. Relative error uses
    |a - n| / max(|a|, |n|, floor); the floor turns the comparison into an
    absolute check where the gradient itself is tiny, where a pure ratio
    would amplify finite-difference truncation noise.

    Requires float64 parameters.
    """
    for name, t in params.items():
        if t.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters; {name} is {t.dtype}")
    rng = rng if rng is not None else np.random.default_rng(0)

    for t in params.values():
        t.zero_grad()
    tape = Tape()
    loss = f(tape)
    tape.backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params.items()}

    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(num_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    entries = []
    for pick in sorted(int(p) for p in picks):
        which = int(np.searchsorted(offsets, pick, side="right")) - 1
        name, idx = names[which], pick - int(offsets[which])
        flat = params[name].data.reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + h
        plus = f(None).item()
        flat[idx] = saved - h
        minus = f(None).item()
        flat[idx] = saved
        numeric = (plus - minus) / (2.0 * h)
        a = float(analytic[name].reshape(-1)[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        entries.append(GradCheckEntry(name, int(idx), a, numeric, rel))

    max_rel = max(e.rel_error for e in entries)
    mean_rel = sum(e.rel_error for e in entries) / len(entries)
    return GradCheckReport(entries, max_rel, mean_rel, tol)
