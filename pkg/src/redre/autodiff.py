"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` records every operation as it is evaluated.  Leaves are
either named parameters (differentiated) or constants (not).  Calling
:meth:`Graph.backward` on a scalar output walks the tape once in reverse.

Ops broadcast the way numpy does, but only as far as the encoder needs:
elementwise ops broadcast, and ``matmul`` broadcasts leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels

# Set to True (the test-suite does) to assert every op output is finite.
CHECK_FINITE = False


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable | None = None
    name: str | None = None
    requires_grad: bool = False


class Var:
    """Handle to a node of a graph."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.graph.constant(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        node = self.graph.nodes[self.id]
        return f"Var(id={self.id}, op={node.op}, shape={node.value.shape})"


class Graph:
    """Append-only operation tape. Not thread safe; use one graph per thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def param(self, value, name: str) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._push(Node("param", (), value, name=name, requires_grad=True))

    def constant(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._push(Node("const", (), value))

    def record(self, op: str, inputs, value, vjp) -> Var:
        """Append an op node.

        ``vjp(grad_out)`` must return one gradient (or None) per input.
        """
        ids = tuple(v.id for v in inputs)
        needs = any(self.nodes[i].requires_grad for i in ids)
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite output from {op}")
        return self._push(Node(op, ids, value, vjp if needs else None, requires_grad=needs))

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.graph is not self:
                raise ValueError("Var belongs to a different graph")
            return x
        return self.constant(x)

    def backward(self, output: Var) -> dict[str, np.ndarray]:
        """Gradients of a scalar output with respect to every named parameter.

        Parameters the output does not depend on get zero gradients.  The tape
        is not modified, so repeated calls return identical arrays.
        """
        out_value = self.nodes[output.id].value
        if out_value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out_value.shape}")
        grads: list[np.ndarray | None] = [None] * (output.id + 1)
        grads[output.id] = np.ones_like(out_value)
        for i in range(output.id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for j, gj in zip(node.inputs, node.vjp(g)):
                if gj is None or not self.nodes[j].requires_grad:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        result = {}
        for i, node in enumerate(self.nodes):
            if node.op != "param":
                continue
            g = grads[i] if i <= output.id else None
            result[node.name] = np.zeros_like(node.value) if g is None else g
        return result


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    graph = a.graph if isinstance(a, Var) else b.graph
    return graph, graph.lift(a), graph.lift(b)


def add(a, b) -> Var:
    graph, a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return graph.record(
        "add", (a, b), a.value + b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    graph, a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return graph.record(
        "sub", (a, b), a.value - b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    graph, a, b = _pair(a, b)
    va, vb = a.value, b.value
    return graph.record(
        "mul", (a, b), va * vb,
        lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)),
    )


def matmul(a: Var, b) -> Var:
    """Matrix product over the last two axes; leading axes broadcast."""
    graph, a, b = _pair(a, b)
    va, vb = a.value, b.value
    if va.ndim < 2 or vb.ndim < 2 or va.shape[-1] != vb.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {va.shape} x {vb.shape}")

    need_a = graph.nodes[a.id].requires_grad
    need_b = graph.nodes[b.id].requires_grad

    def vjp(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(vb, -1, -2)), va.shape)
        if need_b:
            if vb.ndim == 2:
                # shared weight: fold the batch axes into one product
                gb = va.reshape(-1, va.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(va, -1, -2), g), vb.shape)
        return ga, gb

    return graph.record("matmul", (a, b), np.matmul(va, vb), vjp)


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.graph.record("relu", (x,), np.where(mask, x.value, 0.0), lambda g: (g * mask,))


def exp(x: Var) -> Var:
    y = np.exp(x.value)
    return x.graph.record("exp", (x,), y, lambda g: (g * y,))


def log(x: Var) -> Var:
    vx = x.value
    return x.graph.record("log", (x,), np.log(vx), lambda g: (g / vx,))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.graph.record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sum(x: Var) -> Var:  # noqa: A001
    shape = x.shape
    return x.graph.record(
        "sum", (x,), np.asarray(x.value.sum()), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean(x: Var) -> Var:
    shape = x.shape
    n = x.value.size
    return x.graph.record(
        "mean", (x,), np.asarray(x.value.mean()),
        lambda g: (np.full(shape, float(g) / n),),
    )


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.graph.record(
        "reshape", (x,), x.value.reshape(shape), lambda g: (g.reshape(old),)
    )


def transpose(x: Var, axes) -> Var:
    inverse = np.argsort(axes)
    return x.graph.record(
        "transpose", (x,), np.ascontiguousarray(x.value.transpose(axes)),
        lambda g: (g.transpose(inverse),),
    )


def softmax(x: Var) -> Var:
    """Softmax over the last axis, with max subtraction."""
    shape = x.shape
    flat = np.ascontiguousarray(x.value).reshape(-1, shape[-1])
    y = _kernels.softmax(flat)

    def vjp(g):
        gx = _kernels.softmax_bwd(y, np.ascontiguousarray(g).reshape(y.shape))
        return (gx.reshape(shape),)

    return x.graph.record("softmax", (x,), y.reshape(shape), vjp)


def softmax_rows(m) -> np.ndarray:
    """Row softmax of a plain array (no tape)."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return _kernels.softmax(np.ascontiguousarray(m))


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    shape = x.shape
    flat = np.ascontiguousarray(x.value).reshape(-1, shape[-1])
    gval = gamma.value
    y, xhat, rstd = _kernels.layernorm(flat, gval, beta.value, eps)

    def vjp(g):
        gx, gg, gb = _kernels.layernorm_bwd(
            np.ascontiguousarray(g).reshape(y.shape), xhat, rstd, gval
        )
        return gx.reshape(shape), gg, gb

    return x.graph.record("layer_norm", (x, gamma, beta), y.reshape(shape), vjp)


def rotate_pairs(x: Var, cos: np.ndarray, sin: np.ndarray) -> Var:
    """Rotate consecutive pairs ``(x[2i], x[2i+1])`` of the last axis.

    ``cos``/``sin`` hold one entry per pair and broadcast against
    ``x.shape[:-1] + (width // 2,)``.  Angles are constants, not differentiated.
    """
    shape = x.shape
    if shape[-1] % 2:
        raise ValueError(f"rotate_pairs needs an even last axis, got {shape[-1]}")
    pshape = shape[:-1] + (shape[-1] // 2,)
    c = np.ascontiguousarray(np.broadcast_to(cos, pshape)).reshape(-1, pshape[-1])
    s = np.ascontiguousarray(np.broadcast_to(sin, pshape)).reshape(-1, pshape[-1])
    flat = np.ascontiguousarray(x.value).reshape(-1, shape[-1])
    y = _kernels.rotate(flat, c, s)

    def vjp(g):
        gx = _kernels.rotate(np.ascontiguousarray(g).reshape(flat.shape), c, -s)
        return (gx.reshape(shape),)

    return x.graph.record("rotate_pairs", (x,), y.reshape(shape), vjp)


def take_rows(x: Var, index: np.ndarray) -> Var:
    """Pick ``x[b, index[b], :]`` from a ``(B, N, D)`` tensor."""
    shape = x.shape
    batch = np.arange(shape[0])
    index = np.asarray(index)

    def vjp(g):
        gx = np.zeros(shape)
        gx[batch, index] = g
        return (gx,)

    return x.graph.record("take_rows", (x,), x.value[batch, index], vjp)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradReport:
    errors: dict[str, float]
    worst_param: str
    worst_index: tuple
    eps: float
    analytic: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    numeric: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


class GradCheckError(ValueError):
    pass


def relative_error(g_ad, g_fd):
    g_ad = np.asarray(g_ad)
    g_fd = np.asarray(g_fd)
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return np.abs(g_ad - g_fd) / denom


def evaluate(loss_fn, params: dict[str, np.ndarray]):
    graph = Graph()
    handles = {name: graph.param(value, name) for name, value in params.items()}
    out = loss_fn(graph, handles)
    return graph, out


def finite_difference_check(loss_fn, params: dict[str, np.ndarray], eps: float = 1e-5) -> GradReport:
    """Compare tape gradients against central differences, coordinate by coordinate.

    ``loss_fn(graph, handles)`` builds the loss on ``graph`` from the parameter
    handles and returns a scalar Var.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    graph, out = evaluate(loss_fn, params)
    analytic = graph.backward(out)

    def probe(name, idx, delta):
        arr = params[name]
        old = arr[idx]
        arr[idx] = old + delta
        try:
            with np.errstate(all="ignore"):
                value = float(evaluate(loss_fn, params)[1].value)
        except FloatingPointError:
            value = np.nan
        finally:
            arr[idx] = old
        if not np.isfinite(value):
            raise GradCheckError(f"non-finite loss probing {name}{list(idx)} at offset {delta:+g}")
        return value

    errors, numeric = {}, {}
    worst, worst_idx, worst_err = None, (), -1.0
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            fd[idx] = (probe(name, idx, eps) - probe(name, idx, -eps)) / (2 * eps)
        rel = relative_error(analytic[name], fd)
        numeric[name] = fd
        errors[name] = float(rel.max()) if rel.size else 0.0
        if errors[name] > worst_err:
            worst, worst_err = name, errors[name]
            worst_idx = np.unravel_index(int(rel.argmax()), rel.shape) if rel.size else ()
    return GradReport(errors, worst, tuple(int(i) for i in worst_idx), eps, analytic, numeric)
