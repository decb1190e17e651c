"""Dense tensors with tape-based reverse-mode differentiation.

This is deliberately a small engine: it supports exactly the operations
the encoder and the contrastive losses need, nothing more. Training math
runs in float32; gradient checks promote everything to float64.

Gradients are recorded on an explicit :class:`Tape`. Code that must not
receive gradients (the momentum encoder, queue contents) simply runs
outside any ``with Tape():`` block.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    NumericError,
    ParameterError,
)

NORM_EPS = 1e-12

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense float array with an optional gradient buffer.

    Values are treated as immutable while a tape is recording; parameters
    are updated in place only between optimization steps. ``grad``
    accumulates during :meth:`Tape.backward` and is reset by the caller.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of backward rules for one forward pass.

    Each recorded rule is replayed exactly once, in reverse recording
    order, by :meth:`backward`. A tape is single-use: replaying clears it,
    so every optimization step starts from a fresh tape.
    """

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._replayed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, rule: Callable[[], None]) -> None:
        self._records.append(rule)

    def backward(self, loss: Tensor) -> None:
        """Seed ``loss`` with gradient 1 and replay the tape in reverse."""
        if self._replayed:
            raise ParameterError("tape has already been replayed; build a new one")
        if loss.data.ndim != 0:
            raise DimensionError(
                f"backward expects a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for rule in reversed(self._records):
            rule()
        self._records.clear()
        self._replayed = True


def _active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _record(out: Tensor, inputs: Sequence[Tensor], rule: Callable[[], None]) -> None:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(rule)


def _check_2d(t: Tensor, name: str) -> None:
    if t.data.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b`` with gradients into both operands."""
    _check_2d(a, "matmul lhs")
    _check_2d(b, "matmul rhs")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _record(out, (a, b), rule)
    return out


def l2_normalize(v: Tensor) -> Tensor:
    """Scale each row of ``v`` to unit Euclidean norm."""
    _check_2d(v, "l2_normalize input")
    norms = np.sqrt(np.sum(v.data * v.data, axis=1, keepdims=True))
    if v.data.shape[0] > 0 and np.any(norms <= NORM_EPS):
        row = int(np.argmax(norms.ravel() <= NORM_EPS))
        raise DegenerateInputError(
            f"l2_normalize: row {row} has norm {float(norms[row, 0]):.3g} <= {NORM_EPS:g}"
        )
    y = v.data / norms
    out = Tensor(y)

    def rule():
        g = out.grad
        if g is None:
            return
        if v.requires_grad:
            inner = np.sum(g * y, axis=1, keepdims=True)
            v.accumulate_grad((g - y * inner) / norms)

    _record(out, (v,), rule)
    return out


def softmax_rows(x: Tensor, temperature: float) -> Tensor:
    """Row-wise softmax of ``x / temperature`` with max-subtraction."""
    _check_2d(x, "softmax_rows input")
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature!r}")
    z = x.data / temperature
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=1, keepdims=True)
    out = Tensor(s)

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            inner = np.sum(g * s, axis=1, keepdims=True)
            x.accumulate_grad(s * (g - inner) / temperature)

    _record(out, (x,), rule)
    return out


def cross_entropy_from_logits(logits: Tensor, targets, temperature: float) -> Tensor:
    """Mean over rows of ``-log softmax(logits / temperature)[target]``.

    Stabilized with log-sum-exp; ``targets`` is one class index per row.
    """
    _check_2d(logits, "cross_entropy logits")
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature!r}")
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if t.shape != (n,):
        raise DimensionError(f"targets must have shape ({n},), got {t.shape}")
    if n > 0 and (t.min() < 0 or t.max() >= c):
        bad = int(np.argmax((t < 0) | (t >= c)))
        raise IndexError(
            f"target {int(t[bad])} out of range for {c} classes at row {bad}"
        )
    z = logits.data / temperature
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    se = np.sum(e, axis=1, keepdims=True)
    lse = (m + np.log(se)).ravel()
    picked = z[np.arange(n), t]
    out = Tensor(np.mean(lse - picked).astype(z.dtype))

    def rule():
        g = out.grad
        if g is None:
            return
        if logits.requires_grad:
            p = e / se
            p[np.arange(n), t] -= 1.0
            logits.accumulate_grad(g * p / (n * temperature))

    _record(out, (logits,), rule)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    _record(out, (x,), rule)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes differ, {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    _record(out, (a, b), rule)
    return out


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a (1, d) bias row to every row of ``x``."""
    _check_2d(x, "add_bias input")
    if bias.data.shape != (1, x.data.shape[1]):
        raise DimensionError(
            f"bias shape {bias.data.shape} does not match input {x.data.shape}"
        )
    out = Tensor(x.data + bias.data)

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g)
        if bias.requires_grad:
            bias.accumulate_grad(np.sum(g, axis=0, keepdims=True))

    _record(out, (x, bias), rule)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor)

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g * factor)

    _record(out, (x,), rule)
    return out


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product of two (n, d) tensors, returned as (n, 1)."""
    _check_2d(a, "rowwise_dot lhs")
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"rowwise_dot: shapes differ, {a.data.shape} vs {b.data.shape}"
        )
    out = Tensor(np.sum(a.data * b.data, axis=1, keepdims=True))

    def rule():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    _record(out, (a, b), rule)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors with equal row counts along columns."""
    if not parts:
        raise ParameterError("concat_cols needs at least one part")
    rows = parts[0].data.shape[0]
    for p in parts:
        _check_2d(p, "concat_cols part")
        if p.data.shape[0] != rows:
            raise DimensionError(
                f"concat_cols: row counts differ, {rows} vs {p.data.shape[0]}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def rule():
        g = out.grad
        if g is None:
            return
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(g[:, lo:hi])

    _record(out, tuple(parts), rule)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.data).astype(x.data.dtype))

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy())

    _record(out, (x,), rule)
    return out


def rows_weighted_sum(weights: Tensor, blocks: np.ndarray) -> Tensor:
    """Per-row convex combination ``out[i] = sum_j weights[i, j] * blocks[i, j]``.

    ``blocks`` is a constant (n, k, d) array; gradients flow into
    ``weights`` only.
    """
    _check_2d(weights, "rows_weighted_sum weights")
    blocks = np.asarray(blocks)
    n, k = weights.data.shape
    if blocks.ndim != 3 or blocks.shape[:2] != (n, k):
        raise DimensionError(
            f"blocks shape {blocks.shape} does not match weights {weights.data.shape}"
        )
    out = Tensor(np.einsum("nk,nkd->nd", weights.data, blocks))

    def rule():
        g = out.grad
        if g is None:
            return
        if weights.requires_grad:
            weights.accumulate_grad(np.einsum("nd,nkd->nk", g, blocks))

    _record(out, (weights,), rule)
    return out


def rows_dot_blocks(x: Tensor, blocks: np.ndarray) -> Tensor:
    """Per-row dot products ``out[i, j] = x[i] . blocks[i, j]``.

    ``blocks`` is a constant (n, k, d) array; gradients flow into ``x`` only.
    """
    _check_2d(x, "rows_dot_blocks input")
    blocks = np.asarray(blocks)
    n, d = x.data.shape
    if blocks.ndim != 3 or blocks.shape[0] != n or blocks.shape[2] != d:
        raise DimensionError(
            f"blocks shape {blocks.shape} does not match input {x.data.shape}"
        )
    out = Tensor(np.einsum("nd,nkd->nk", x.data, blocks))

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(np.einsum("nk,nkd->nd", g, blocks))

    _record(out, (x,), rule)
    return out


def gradcheck(f, inputs: Sequence[Tensor], step: float = 3e-3) -> float:
    """Compare reverse-mode gradients of scalar ``f`` to central differences.

    All inputs are promoted to float64 and perturbed componentwise with a
    symmetric fourth-order stencil; the return value is the worst relative
    error, with ``|.| + 1e-8`` in the denominator (taken against the larger
    of the two gradients). The default step balances stencil truncation
    against float64 round-off for sharply-peaked (low temperature) losses.
    ``f`` must be deterministic and evaluable at the perturbed inputs.
    """
    if not step > 0:
        raise ParameterError(f"step must be > 0, got {step!r}")
    probes = [
        Tensor(t.data.astype(np.float64), requires_grad=t.requires_grad)
        for t in inputs
    ]
    with Tape() as tape:
        out = f(*probes)
    if out.data.ndim != 0:
        raise ParameterError("gradcheck expects a scalar-valued function")
    if not np.isfinite(out.data):
        raise NumericError("gradcheck: function value is non-finite")
    tape.backward(out)

    worst = 0.0
    for t in probes:
        if not t.requires_grad:
            continue
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
        if not np.all(np.isfinite(analytic)):
            raise NumericError("gradcheck: analytic gradient is non-finite")
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            values = []
            for offset in (2 * step, step, -step, -2 * step):
                flat[i] = orig + offset
                values.append(float(f(*probes).data))
            flat[i] = orig
            if not all(np.isfinite(v) for v in values):
                raise NumericError("gradcheck: perturbed evaluation is non-finite")
            numeric = (
                -values[0] + 8.0 * values[1] - 8.0 * values[2] + values[3]
            ) / (12.0 * step)
            denom = max(abs(analytic[i]), abs(numeric)) + 1e-8
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
