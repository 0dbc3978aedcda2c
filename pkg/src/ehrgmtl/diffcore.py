"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Operations executed inside an active :class:`Tape` are recorded together with
a local gradient rule; :func:`backward` replays the tape in reverse.  Outside a
tape nothing is recorded, which is what inference and finite differences use.

    with Tape() as tape:
        loss = mean(bce_with_logits(matmul_add(x, W, b), y))
    backward(loss, tape)
    W.grad
"""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor", "Tape", "backward", "finite_diff_check", "numeric_grad",
    "matmul_add", "relu", "sigmoid_stable", "bce_with_logits", "add", "mul",
    "scale", "mean", "sum_all", "propagate", "segment_mean", "dot_add",
]

_local = threading.local()

# Open interval (0, 1) in double precision.
_PROB_LO = np.nextafter(0.0, 1.0)
_PROB_HI = np.nextafter(1.0, 0.0)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        # lets builtin sum() start from 0
        if isinstance(other, (int, float)) and other == 0:
            return self
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class _Record:
    __slots__ = ("out", "inputs", "rule")

    def __init__(self, out, inputs, rule):
        self.out = out
        self.inputs = inputs
        self.rule = rule


class Tape:
    """Ordered record of executed operations.

    Used as a context manager; the active tape is thread-local so separate
    threads can each run their own forward/backward.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def _append(self, out: Tensor, inputs: tuple, rule: Callable) -> None:
        self.records.append(_Record(out, inputs, rule))
        self._outputs.add(id(out))


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value: np.ndarray, inputs: tuple, rule: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, track)
    if track:
        tape._append(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor ``t``.

    Gradients add onto whatever is already stored in ``grad``, so call
    ``zero_grad`` on parameters between optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    reached: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                reached[key] = inp
    for key, t in reached.items():
        t.grad = grads[key] if t.grad is None else t.grad + grads[key]


# ---------------------------------------------------------------------------
# operations


def matmul_add(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W @ x + b`` for a vector ``x``; row-wise ``x @ W.T + b`` for a matrix."""
    if W.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"matmul_add: x has shape {x.shape}, W has shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"matmul_add: b has shape {b.shape}, W has shape {W.shape}")
    xd, Wd = x.data, W.data
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data

    def rule(g):
        gx = g @ Wd if x.requires_grad else None
        if xd.ndim == 1:
            gW = np.outer(g, xd) if W.requires_grad else None
            gb = g
        else:
            gW = g.T @ xd if W.requires_grad else None
            gb = g.sum(axis=0)
        return (gx, gW, gb) if b is not None else (gx, gW)

    inputs = (x, W, b) if b is not None else (x, W)
    return _emit(y, inputs, rule)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient 0 at the kink
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_stable(x: Tensor) -> Tensor:
    """Elementwise logistic function, kept strictly inside (0, 1).

    For logits beyond about +-745 the exact value is not representable in
    double precision; the output is pinned to the nearest representable
    interior point instead of collapsing to 0 or 1.
    """
    s = np.clip(_sigmoid(x.data), _PROB_LO, _PROB_HI)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def bce_with_logits(logit: Tensor, label) -> Tensor:
    """Elementwise binary cross-entropy on logits, stable for large ``|logit|``."""
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), logit.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("bce_with_logits: labels must be 0 or 1")
    z = logit.data
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _emit(loss, (logit,), lambda g: (g * (_sigmoid(z) - y),))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant that is not differentiated."""
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    shape = a.shape
    return _emit(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g),))


def propagate(
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    edge_weight: np.ndarray | None = None,
    self_weight: np.ndarray | None = None,
) -> Tensor:
    """Message passing: ``out[v] = self_weight[v] h[v] + sum_e edge_weight[e] h[src[e]]``
    over directed edges ``e`` with ``dst[e] == v``.

    Weights default to one; undirected graphs must list both directions.
    """
    n = h.shape[0]
    src = np.asarray(src, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    if src.shape != dst.shape:
        raise ContractError("propagate: src and dst differ in length")
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise ContractError(f"propagate: edge index out of range for {n} nodes")
    hd = h.data
    ew = None if edge_weight is None else np.asarray(edge_weight, dtype=np.float64)[:, None]
    sw = None if self_weight is None else np.asarray(self_weight, dtype=np.float64)[:, None]

    def spread(values, frm, to):
        out = values.copy() if sw is None else values * sw
        msg = values[frm] if ew is None else values[frm] * ew
        np.add.at(out, to, msg)
        return out

    return _emit(spread(hd, src, dst), (h,), lambda g: (spread(g, dst, src),))


def segment_mean(h: Tensor, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Row means of ``h`` grouped by ``segment_ids`` -> ``(n_segments, d)``."""
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape != (h.shape[0],):
        raise DimensionError(f"segment_mean: {ids.shape[0]} ids for {h.shape[0]} rows")
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    if counts.shape[0] != n_segments or np.any(counts == 0):
        raise ContractError("segment_mean: every segment needs at least one row")
    out = np.zeros((n_segments,) + h.shape[1:])
    np.add.at(out, ids, h.data)
    inv = (1.0 / counts)[:, None]
    out *= inv
    return _emit(out, (h,), lambda g: ((g * inv)[ids],))


def dot_add(S: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """``S @ x + b`` for a matrix ``S``, vector ``x`` and scalar ``b``."""
    if S.data.ndim != 2 or x.shape != (S.shape[1],) or b.data.size != 1:
        raise DimensionError(f"dot_add: S {S.shape}, x {x.shape}, b {b.shape}")
    Sd, xd = S.data, x.data
    y = Sd @ xd + b.data.reshape(())
    bshape = b.shape

    def rule(g):
        gS = np.outer(g, xd) if S.requires_grad else None
        return gS, Sd.T @ g, np.full(bshape, g.sum())

    return _emit(y, (S, x, b), rule)


# ---------------------------------------------------------------------------
# finite differences


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (``x`` is restored)."""
    if step <= 0:
        raise ContractError("step must be positive")
    flat = x.data.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x).data)
        flat[i] = orig - step
        fm = float(f(x).data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(x.shape)


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    saved, x.grad = x.grad, None
    was = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            y = f(x)
        if y in tape:
            backward(y, tape)
        g = np.zeros_like(x.data) if x.grad is None else x.grad
    finally:
        x.grad = saved
        x.requires_grad = was
    return g


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max over components of ``|analytic - central| / max(1e-8, |central|)``.

    ``f`` is called with ``x`` itself; values of ``x`` are perturbed in place
    and restored afterwards.
    """
    numeric = numeric_grad(f, x, step)
    analytic = analytic_grad(f, x)
    if numeric.size == 0:
        return 0.0
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))
    return float(rel.max())
