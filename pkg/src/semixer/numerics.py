"""Dense float64 arrays with tape-based reverse-mode differentiation.

Arrays are backed by numpy; everything above storage (the tape, the
primitive set and every backward rule) lives here.  Usage::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = mean(mul(x @ w, x @ w))
    tape.backward(loss)
    w.grad  # same shape as w

Outside an active tape no graph is recorded, so inference costs nothing
extra.  Broadcasting is restricted to equal shapes, scalars, and a
trailing-suffix operand (bias rows, position tables).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, EvaluationError, ShapeError

# tanh-form GELU; fixed so outputs do not depend on the platform's erf
GELU_COEFF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715

LAYER_NORM_EPS = 1e-5

_TAPES: list["GradTape"] = []
_COUNTERS: list["OpCounter"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_taped")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._taped = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._taped = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._taped

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Ordered record of the operations applied to tracked tensors.

    Nodes are appended in execution order, which is already topological;
    ``backward`` walks them once in reverse and deposits gradients on every
    leaf tensor that has ``requires_grad`` set.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        for t in inputs:
            if t.requires_grad:
                self._leaves[id(t)] = t
        self.nodes.append(Node(op, inputs, output, backward))

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if output.size != 1:
                raise ShapeError(f"backward needs a scalar output or an explicit seed, got shape {output.shape}")
            seed = np.ones_like(output.data)
        grads: dict[int, np.ndarray] = {id(output): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.tracked:
                    continue
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
        for key, leaf in self._leaves.items():
            if key in grads:
                g = grads[key]
                leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        self.nodes.clear()
        self._leaves.clear()


class OpCounter:
    """Counts primitive invocations (and matmul multiply-adds) while active."""

    def __init__(self):
        self.counts: Counter[str] = Counter()
        self.flops = 0

    def __enter__(self) -> "OpCounter":
        _COUNTERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _COUNTERS.remove(self)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; every stochastic op takes one explicitly."""
    return np.random.Generator(np.random.Philox(seed))


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward, flops: int = 0) -> Tensor:
    result = Tensor._wrap(out)
    for counter in _COUNTERS:
        counter.counts[op] += 1
        counter.flops += flops
    if _TAPES and any(t.tracked for t in inputs):
        result._taped = True
        _TAPES[-1].record(op, inputs, result, backward)
    return result


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    if len(b) == 0:
        return a
    if len(a) == 0:
        return b
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.tracked else None
        gb = _unbroadcast(g * a.data, b.shape) if b.tracked else None
        return ga, gb

    return _emit("mul", (a, b), a.data * b.data, backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def gelu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    x2 = x * x  # x ** k with a float array is far slower than products
    th = np.tanh(GELU_COEFF * x * (1.0 + GELU_CUBIC * x2))
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _emit("gelu", (a,), out, backward)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    k, n = b.shape[-2], b.shape[-1]
    if b.ndim == 2:
        # one large GEMM instead of a loop over the batch
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))
        flops = 2 * a2.shape[0] * k * n

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.tracked else None
            gb = a2.T @ g2 if b.tracked else None
            return ga, gb
    else:
        out = np.matmul(a.data, b.data)
        flops = 2 * int(np.prod(out.shape)) * k

        def backward(g):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.tracked else None
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.tracked else None
            return ga, gb

    return _emit("matmul", (a, b), out, backward, flops)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, i: int = -1, j: int = -2) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", (a,), np.swapaxes(a.data, i, j), lambda g: (np.swapaxes(g, i, j),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _emit("reshape", (a,), out, lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start, stop)`` along one axis."""
    a = as_tensor(a)
    ax = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[ax]:
        raise ShapeError(f"take: range [{start}, {stop}) out of bounds for axis {axis} of {a.shape}")
    index = (slice(None),) * ax + (slice(start, stop),)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _emit("take", (a,), a.data[index], backward)


def total(a) -> Tensor:
    a = as_tensor(a)
    return _emit("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _emit("mean", (a,), np.asarray(a.data.mean()),
                 lambda g: (np.full(a.shape, float(g) / n),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", (a,), y,
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply per-feature scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: parameters {gamma.shape}/{beta.shape} do not match feature size {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead) if gamma.tracked else None
        dbeta = g.sum(axis=lead) if beta.tracked else None
        dx = None
        if x.tracked:
            dxhat = g * gamma.data
            dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _emit("layer_norm", (x, gamma, beta), out, backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis with ``weight`` stored (out, in)."""
    x = as_tensor(x)
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, x.shape[0])), swapaxes(weight, 0, 1)), (as_tensor(weight).shape[0],))
        return y if bias is None else add(y, bias)
    y = matmul(x, swapaxes(weight, 0, 1))
    return y if bias is None else add(y, bias)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences."""
    return grad_check_params(lambda: f(x), [x], eps=eps)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    coords: Sequence[tuple[int, int]] | None = None,
    eps: float = 1e-5,
) -> float:
    """Finite-difference check of ``loss_fn`` w.r.t. selected coordinates.

    ``coords`` holds ``(param_index, flat_index)`` pairs; by default every
    coordinate of every parameter is probed.  ``loss_fn`` must be a pure
    function of the parameters (reseed any randomness inside it).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    saved = [(p.requires_grad, p.grad) for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        with GradTape() as tape:
            loss = loss_fn()
        if not np.isfinite(loss.data).all():
            raise EvaluationError(f"function value is not finite: {loss.data}")
        tape.backward(loss)
        analytic = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
        if coords is None:
            coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
        worst = 0.0
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            up = float(loss_fn().data)
            flat[j] = orig - eps
            down = float(loss_fn().data)
            flat[j] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise EvaluationError(f"function value is not finite near coordinate {(i, j)}")
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[i].reshape(-1)[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        return worst
    finally:
        for p, (rg, g) in zip(params, saved):
            p.requires_grad = rg
            p.grad = g
