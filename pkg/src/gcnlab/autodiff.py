"""Tape-based reverse-mode differentiation over dense float64 matrices.

Only the primitives needed by the models are provided. Each primitive takes
:class:`Tensor` arguments (raw arrays are promoted to constants), computes the
forward value eagerly and, when any argument lives on a :class:`Tape`, appends
a node holding the local backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import ConvOperator, SparseMatrix, spmm, spmm_t


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "id")

    def __init__(self, value: np.ndarray, tape: Optional["Tape"] = None, id: Optional[int] = None):
        self.value = value
        self.tape = tape
        self.id = id

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        where = f"node {self.id}" if self.tape is not None else "constant"
        return f"Tensor(shape={self.shape}, {where})"


@dataclass
class _Node:
    op: str
    parents: tuple[Optional[int], ...]
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]
    shape: tuple[int, int]
    trainable: bool = False


class Tape:
    """Append-only record of primitive applications; nodes only reference earlier nodes."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, trainable: bool = True) -> Tensor:
        value = _as_matrix(value)
        _check_finite(value, "leaf", len(self.nodes))
        self.nodes.append(_Node("leaf", (), None, value.shape, trainable))
        self.values.append(value)
        return Tensor(value, self, len(self.nodes) - 1)

    def record(self, op, value, parents, backward) -> Tensor:
        self.nodes.append(_Node(op, parents, backward, value.shape))
        self.values.append(value)
        return Tensor(value, self, len(self.nodes) - 1)

    def trainable_ids(self) -> list[int]:
        return [k for k, nd in enumerate(self.nodes) if nd.trainable]

    def inputs_of(self, op: str) -> list[np.ndarray]:
        """Values feeding every recorded node of kind ``op`` (first argument)."""
        out = []
        for nd in self.nodes:
            if nd.op == op and nd.parents and nd.parents[0] is not None:
                out.append(self.values[nd.parents[0]])
        return out


def constant(value) -> Tensor:
    value = _as_matrix(value)
    _check_finite(value, "constant", None)
    return Tensor(value)


def _as_matrix(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ValueError(f"tensors are 2-d, got shape {a.shape}")
    return a


def _check_finite(value, op, node_id):
    if not np.all(np.isfinite(value)):
        where = f"node {node_id}" if node_id is not None else "a constant"
        raise NonFiniteError(f"{op} produced non-finite values at {where}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _emit(op: str, value: np.ndarray, args: Sequence[Tensor], backward) -> Tensor:
    tape = None
    for a in args:
        if a.tape is not None:
            if tape is not None and a.tape is not tape:
                raise ValueError("arguments recorded on different tapes")
            tape = a.tape
    if tape is None:
        _check_finite(value, op, None)
        return Tensor(value)
    _check_finite(value, op, len(tape.nodes))
    parents = tuple(a.id if a.tape is tape else None for a in args)
    return tape.record(op, value, parents, backward)


def _need_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm_op(op: ConvOperator | SparseMatrix, x) -> Tensor:
    x = _lift(x)
    m = op.matrix if isinstance(op, ConvOperator) else op
    if m.cols != x.rows:
        raise ValueError(f"spmm_op: operator is {m.shape}, input is {x.shape}")
    return _emit("spmm", spmm(op, x.value), (x,), lambda g: (spmm_t(op, g),))


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _need_same_shape("add", a, b)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.value > 0
    return _emit("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def scale(x, c: float) -> Tensor:
    x = _lift(x)
    c = float(c)
    return _emit("scale", c * x.value, (x,), lambda g: (c * g,))


def col_mean_subtract(x, weights: Optional[np.ndarray] = None) -> Tensor:
    """Remove each column's component along ``weights`` (plain column mean if None).

    With weights w the map is  x -> x - w * mean(x / w),  i.e. the mean is
    taken after dividing out w and re-expanded along w. It annihilates w and
    leaves 1^T diag(w)^-1 x_new = 0.
    """
    x = _lift(x)
    n = x.rows
    if weights is None:
        out = x.value - x.value.mean(axis=0, keepdims=True)
        return _emit("col_mean_subtract", out, (x,), lambda g: (g - g.mean(axis=0, keepdims=True),))
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if w.shape[0] != n:
        raise ValueError(f"col_mean_subtract: {w.shape[0]} weights for {n} rows")
    if np.any(w == 0):
        raise ValueError("col_mean_subtract: weights must be nonzero")
    out = x.value - w * (x.value / w).mean(axis=0, keepdims=True)

    def back(g):
        return (g - (w.T @ g) / (n * w),)

    return _emit("col_mean_subtract", out, (x,), back)


def row_l2_rescale(x, s: float = 1.0, eps: float = 1e-6) -> Tensor:
    """Rescale so the mean squared row norm equals s^2: x * s / sqrt(eps + |x|_F^2 / n)."""
    if s <= 0:
        raise ValueError(f"row_l2_rescale: scale must be > 0, got {s}")
    x = _lift(x)
    n = x.rows
    xv = x.value
    r = np.sqrt(eps + np.sum(xv * xv) / n)
    out = s * xv / r

    def back(g):
        return (s * g / r - s * xv * np.sum(g * xv) / (n * r**3),)

    return _emit("row_l2_rescale", out, (x,), back)


@dataclass
class BatchNormState:
    mean: np.ndarray
    var: np.ndarray


def batch_norm(
    x,
    gamma,
    beta,
    eps: float = 1e-5,
    state: Optional[BatchNormState] = None,
    training: bool = True,
    momentum: float = 0.9,
) -> Tensor:
    """Column standardization with affine gamma/beta (each 1 x d).

    In training mode batch statistics are used and ``state`` (if given) is
    updated in place as ``momentum * old + (1 - momentum) * batch``. In
    inference mode the stored running statistics are used.
    """
    if eps <= 0:
        raise ValueError("batch_norm: eps must be > 0")
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    n, d = x.shape
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ValueError(f"batch_norm: gamma/beta must be (1, {d})")
    xv, gv, bv = x.value, gamma.value, beta.value

    if not training:
        if state is None:
            raise ValueError("batch_norm: inference mode needs running statistics")
        inv = 1.0 / np.sqrt(state.var + eps)
        xhat = (xv - state.mean) * inv
        out = gv * xhat + bv
        return _emit(
            "batch_norm",
            out,
            (x, gamma, beta),
            lambda g: (g * gv * inv, np.sum(g * xhat, axis=0, keepdims=True), np.sum(g, axis=0, keepdims=True)),
        )

    mu = xv.mean(axis=0, keepdims=True)
    var = xv.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = gv * xhat + bv
    if state is not None:
        unbiased = var * n / max(n - 1, 1)
        state.mean = momentum * state.mean + (1.0 - momentum) * mu
        state.var = momentum * state.var + (1.0 - momentum) * unbiased

    def back(g):
        dxhat = g * gv
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0, keepdims=True) - xhat * np.sum(dxhat * xhat, axis=0, keepdims=True))
        return (dx, np.sum(g * xhat, axis=0, keepdims=True), np.sum(g, axis=0, keepdims=True))

    return _emit("batch_norm", out, (x, gamma, beta), back)


def log_softmax_rows(x) -> Tensor:
    x = _lift(x)
    z = x.value - x.value.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return _emit("log_softmax", out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; ``rate == 0`` returns ``x`` unchanged."""
    x = _lift(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", x.value * keep, (x,), lambda g: (g * keep,))


def masked_nll(logp, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of -logp[i, labels[i]] over rows where ``mask`` is set (1 x 1)."""
    logp = _lift(logp)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("masked_nll: empty mask")
    cls = np.asarray(labels)[idx]
    if np.any(cls < 0) or np.any(cls >= logp.cols):
        raise ValueError("masked_nll: masked rows need labels in [0, classes)")
    val = -logp.value[idx, cls].mean()

    def back(g):
        out = np.zeros_like(logp.value)
        out[idx, cls] = -g[0, 0] / idx.size
        return (out,)

    return _emit("masked_nll", np.array([[val]]), (logp,), back)


def trace_quadratic(x, op: ConvOperator | SparseMatrix) -> Tensor:
    """0.5 * Tr(x^T op x) for a symmetric operator (1 x 1)."""
    x = _lift(x)
    ox = spmm(op, x.value)
    val = 0.5 * np.sum(x.value * ox)
    return _emit("trace_quadratic", np.array([[val]]), (x,), lambda g: (g[0, 0] * ox,))


def sum_all(x) -> Tensor:
    x = _lift(x)
    shape = x.shape
    return _emit("sum", np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """One reverse sweep; returns d(loss)/d(leaf) for every trainable leaf.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss is not recorded on this tape")
    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.id] = np.ones((1, 1))
    for k in range(loss.id, -1, -1):
        g = grads[k]
        node = tape.nodes[k]
        if g is None or node.backward is None:
            continue
        for p, pg in zip(node.parents, node.backward(g)):
            if p is None:
                continue
            grads[p] = pg if grads[p] is None else grads[p] + pg
    return {
        k: (grads[k] if grads[k] is not None else np.zeros(tape.nodes[k].shape))
        for k in tape.trainable_ids()
    }


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps Tensors to a 1x1 Tensor. Relative error per entry is
    |a - b| / max(|a|, |b|, 1e-8).
    """
    inputs = [_as_matrix(x).copy() for x in inputs]
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    grads = backward(tape, f(*leaves))

    def value_at(args):
        return f(*[constant(a) for a in args]).item()

    worst = 0.0
    for which, leaf in enumerate(leaves):
        analytic = grads[leaf.id]
        x = inputs[which]
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + step
            fp = value_at(inputs)
            x[idx] = orig - step
            fm = value_at(inputs)
            x[idx] = orig
            numeric = (fp - fm) / (2 * step)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
