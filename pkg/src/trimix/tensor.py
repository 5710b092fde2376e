"""Dense float64 tensors with a reverse-mode autodiff tape.

The tape is define-by-run and rebuilt every training step: operations
append nodes in execution order, so insertion order is already a
topological order and the backward sweep is a single reverse pass that
touches each node at most once.

Values are 64-bit throughout; every recorded operation checks its output
for NaN/Inf and fails loudly instead of propagating poison.
"""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DetachedValueError,
    DimensionError,
    NumericError,
)

Array = np.ndarray

# backward(upstream) -> one gradient array per op input, in input order
BackwardRule = Callable[[Array], tuple]


_F64 = np.dtype(np.float64)


def as_array(values) -> Array:
    """Coerce to a contiguous row-major float64 array."""
    if type(values) is np.ndarray and values.dtype is _F64 and values.flags.c_contiguous:
        return values
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64))


class Tensor:
    """Row-major float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, values, tape: Optional["Tape"] = None, node: Optional[int] = None):
        self.data = as_array(values)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

    # arithmetic sugar; scalar `*` is the only scalar-tensor broadcast
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scalar_mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def abs(self) -> "Tensor":
        return tensor_abs(self)

    def square(self) -> "Tensor":
        return square(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def flip_rows(self) -> "Tensor":
        return flip_rows(self)

    def backward(self) -> dict:
        return backward(self)


class TapeNode:
    __slots__ = ("kind", "parents", "shape", "rule")

    def __init__(self, kind: str, parents: tuple, shape: tuple, rule: Optional[BackwardRule]):
        self.kind = kind
        self.parents = parents
        self.shape = shape
        self.rule = rule


class Tape:
    """Append-only operation record; one tape per training step, one thread."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, kind: str, parents: tuple, shape: tuple, rule: Optional[BackwardRule]) -> int:
        self.nodes.append(TapeNode(kind, parents, shape, rule))
        return len(self.nodes) - 1

    def leaf(self, tensor: Tensor) -> Tensor:
        """Register a differentiable input; the returned tensor shares storage."""
        node = self._append("leaf", (), tensor.data.shape, None)
        return Tensor(tensor.data, tape=self, node=node)


def apply_op(kind: str, inputs: Sequence[Tensor], out_data: Array, rule: BackwardRule,
             check: bool = True) -> Tensor:
    """Record one operation on the tape shared by `inputs`, if any.

    `rule(upstream)` must return one gradient array per input, aligned with
    `inputs`; slots for constant (off-tape) inputs are ignored.  Off-tape
    inputs make this a plain value computation with no node appended.
    `check=False` is reserved for ops that only move finite values around.
    """
    # single-pass alarm: NaN/Inf always poison the sum; a non-finite sum of
    # finite values (overflow) is ruled out by the exact recheck
    if check and not math.isfinite(np.add.reduce(out_data, axis=None)) \
            and not np.isfinite(out_data).all():
        raise NumericError(f"operation '{kind}' produced non-finite values")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ContractError(f"operation '{kind}' mixes tensors from two different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out_data)
    parents = tuple(t.node for t in inputs)
    node = tape._append(kind, parents, out_data.shape, rule)
    return Tensor(out_data, tape=tape, node=node)


def _require_same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {list(a.shape)} and {list(b.shape)} do not match")


def _require_2d(kind: str, t: Tensor) -> None:
    if t.ndim != 2:
        raise DimensionError(f"{kind}: expected a 2-D tensor, got shape {list(t.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return apply_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return apply_op("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def scalar_mul(t: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply_op("scalar_mul", (t,), t.data * s, lambda g: (g * s,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("hadamard", a, b)
    ad, bd = a.data, b.data
    return apply_op("hadamard", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {list(a.shape)} x {list(b.shape)}"
        )
    ad, bd = a.data, b.data
    return apply_op("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def transpose(t: Tensor) -> Tensor:
    _require_2d("transpose", t)
    return apply_op("transpose", (t,), np.ascontiguousarray(t.data.T), lambda g: (g.T,), check=False)


def flip_rows(t: Tensor) -> Tensor:
    """Reverse the batch (first) axis; row i of the output is row B-1-i."""
    if t.ndim < 1 or t.shape[0] < 1:
        raise DimensionError(f"flip_rows: needs a leading batch axis, got shape {list(t.shape)}")
    return apply_op("flip_rows", (t,), t.data[::-1].copy(), lambda g: (g[::-1],), check=False)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0  # subgradient 0 at exactly 0
    return apply_op("relu", (t,), np.maximum(t.data, 0.0), lambda g: (g * mask,), check=False)


def tensor_abs(t: Tensor) -> Tensor:
    sgn = np.sign(t.data)  # sign(0) == 0: subgradient 0 at the kink
    return apply_op("abs", (t,), np.abs(t.data), lambda g: (g * sgn,), check=False)


def square(t: Tensor) -> Tensor:
    d = t.data
    return apply_op("square", (t,), d * d, lambda g: (2.0 * d * g,))


def tensor_sum(t: Tensor) -> Tensor:
    shape = t.data.shape
    out = np.array([t.data.sum()])
    return apply_op("sum", (t,), out, lambda g: (np.full(shape, float(g.reshape(-1)[0])),))


def tensor_mean(t: Tensor) -> Tensor:
    shape = t.data.shape
    size = t.data.size
    out = np.array([t.data.mean()])
    return apply_op("mean", (t,), out, lambda g: (np.full(shape, float(g.reshape(-1)[0]) / size),))


def add_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a length-D bias vector to every row of a BxD matrix."""
    _require_2d("add_bias", m)
    if bias.ndim != 1 or bias.shape[0] != m.shape[1]:
        raise DimensionError(
            f"add_bias: bias shape {list(bias.shape)} does not fit matrix {list(m.shape)}"
        )
    return apply_op("add_bias", (m, bias), m.data + bias.data, lambda g: (g, g.sum(axis=0)))


def affine(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Fused x @ w + bias: one tape node per layer."""
    _require_2d("affine", x)
    _require_2d("affine", w)
    if x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"affine: inner dimensions disagree for shapes {list(x.shape)} x {list(w.shape)}"
        )
    if bias.ndim != 1 or bias.shape[0] != w.shape[1]:
        raise DimensionError(
            f"affine: bias shape {list(bias.shape)} does not fit weight {list(w.shape)}"
        )
    xd, wd = x.data, w.data
    out = xd @ wd
    out += bias.data
    return apply_op("affine", (x, w, bias), out,
                    lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss.

    Returns a map `leaf node id -> gradient tensor` covering every leaf on
    the tape; leaves the loss does not depend on get zero gradients.
    """
    if loss.tape is None or loss.node is None:
        raise DetachedValueError("backward needs a loss recorded on a tape")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    tape = loss.tape
    grads: list[Optional[Array]] = [None] * (loss.node + 1)
    grads[loss.node] = np.ones_like(loss.data)
    for nid in range(loss.node, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.rule is None:
            continue
        for pid, pg in zip(node.parents, node.rule(g)):
            if pid is None:
                continue
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    out: dict[int, Tensor] = {}
    for nid, node in enumerate(tape.nodes):
        if node.kind != "leaf":
            continue
        g = grads[nid] if nid < len(grads) else None
        out[nid] = Tensor(np.zeros(node.shape) if g is None else g)
    return out
