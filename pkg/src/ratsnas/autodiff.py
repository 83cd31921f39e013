"""A small reverse-mode autodiff engine over dense float64 numpy arrays.

Every value lives on a :class:`Tape`. Primitives append one node each, with
the parent indices and a closure computing the adjoints, so the tape is
topologically ordered by construction and backprop is a single reverse sweep.

Batched leading axes are supported where the predictors need them
(``(B, n, f) @ (f, h)``, bias rows); broadcast axes are summed out in the
adjoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonFiniteError, NotScalarError, ShapeMismatchError

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    backward: Backward | None
    name: str | None = None
    requires_grad: bool = False
    shape: tuple[int, ...] = ()


class Tensor:
    __slots__ = ("data", "tape", "index")

    def __init__(self, data: np.ndarray, tape: "Tape", index: int):
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.index].requires_grad

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, index={self.index})"


def _check_finite(data: np.ndarray, what: str):
    # a single reduction: any NaN/Inf (or overflow) makes the sum non-finite
    if not math.isfinite(data.sum()):
        raise NonFiniteError(f"non-finite value produced by {what}")


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, data, name: str | None = None, requires_grad: bool = False) -> Tensor:
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, f"leaf {name or len(self.nodes)}")
        self.nodes.append(Node("leaf", (), None, name, requires_grad, arr.shape))
        return Tensor(arr, self, len(self.nodes) - 1)

    def param(self, data, name: str) -> Tensor:
        return self.leaf(data, name=name, requires_grad=True)

    def const(self, data) -> Tensor:
        return self.leaf(data)

    def record(self, op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Backward) -> Tensor:
        """Append a primitive application. Public so tests can add custom ops."""
        for p in parents:
            if p.tape is not self:
                raise ValueError("operands live on different tapes")
        _check_finite(data, op)
        requires_grad = any(self.nodes[p.index].requires_grad for p in parents)
        self.nodes.append(Node(op, tuple(p.index for p in parents), backward, None, requires_grad))
        return Tensor(data, self, len(self.nodes) - 1)

    def params(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.requires_grad}


def backprop(tape: Tape, output: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. every named parameter on ``tape``.

    The tape itself is not mutated, so repeated calls give identical results.
    """
    if output.data.size != 1:
        raise NotScalarError(f"backprop needs a scalar output, got shape {output.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[output.index] = np.ones_like(output.data)
    for i in range(output.index, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.backward is None or not node.requires_grad:
            continue
        for p, gp in zip(node.parents, node.backward(g)):
            if gp is None or not tape.nodes[p].requires_grad:
                continue
            grads[p] = gp if grads[p] is None else grads[p] + gp
    out = {}
    for name, idx in tape.params().items():
        g = grads[idx]
        out[name] = np.zeros(tape.nodes[idx].shape) if g is None else g
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    shared_b = bd.ndim == 2 and ad.ndim > 2
    if shared_b:
        # one GEMM over all stacked rows instead of a loop of small ones
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:])
    else:
        out = ad @ bd

    def backward(g):
        ga = gb = None
        if shared_b:
            g2 = g.reshape(-1, g.shape[-1])
            if need_a:
                ga = (g2 @ bd.T).reshape(ad.shape)
            if need_b:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g2
            return ga, gb
        if need_a:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if need_b:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return a.tape.record("matmul", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return a.tape.record("add", a.data + b.data, (a, b),
                         lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product (with broadcasting)."""
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if need_a else None,
                _unbroadcast(g * ad, bd.shape) if need_b else None)

    return a.tape.record("mul", ad * bd, (a, b), backward)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    lead = tensors[0].shape[:-1]
    if any(t.shape[:-1] != lead for t in tensors):
        raise ShapeMismatchError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    cuts = np.cumsum([t.shape[-1] for t in tensors])[:-1]
    return tensors[0].tape.record("concat", np.concatenate([t.data for t in tensors], axis=-1),
                                  tuple(tensors), lambda g: np.split(g, cuts, axis=-1))


def relu(x: Tensor) -> Tensor:
    # relu'(0) = 0
    mask = x.data > 0
    return x.tape.record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return x.tape.record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def clamp01(x: Tensor) -> Tensor:
    # gradient is zero on the boundary and outside
    inside = (x.data > 0.0) & (x.data < 1.0)
    return x.tape.record("clamp01", np.clip(x.data, 0.0, 1.0), (x,), lambda g: (g * inside,))


def transpose(x: Tensor) -> Tensor:
    return x.tape.record("transpose", np.swapaxes(x.data, -1, -2), (x,),
                         lambda g: (np.swapaxes(g, -1, -2),))


def mean_nodes(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over the node axis (-2), optionally restricted to ``mask`` nodes."""
    if mask is None:
        mask = np.ones(x.shape[:-1])
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape[:-1]:
        raise ShapeMismatchError(f"mean_nodes: mask {mask.shape} vs features {x.shape}")
    w = (mask / mask.sum(axis=-1, keepdims=True))[..., None]
    return x.tape.record("mean_nodes", (x.data * w).sum(axis=-2), (x,),
                         lambda g: (g[..., None, :] * w,))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target (no gradient flows into it)."""
    if isinstance(target, Tensor):
        target = target.data
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeMismatchError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size
    return pred.tape.record("mse", np.array(np.mean(diff * diff)), (pred,),
                            lambda g: (g * 2.0 * diff / n,))


def row_normalize(a: Tensor) -> Tensor:
    """``D^-1 (A + I)`` with D the row sums of ``A + I``; needs ``A >= 0``."""
    if a.data.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatchError(f"row_normalize: expected square matrices, got {a.shape}")
    a_hat = a.data + np.eye(a.shape[-1])
    s = a_hat.sum(axis=-1, keepdims=True)
    y = a_hat / s

    def backward(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) / s,)

    return a.tape.record("row_normalize", y, (a,), backward)


# ----------------------------------------------------------------- drivers

Expr = Callable[[Tape, Mapping[str, Tensor], Mapping[str, Tensor]], Tensor]


def eval_forward(expr: Expr, inputs: Mapping[str, np.ndarray],
                 params: Mapping[str, np.ndarray]) -> tuple[Tensor, Tape]:
    tape = Tape()
    x = {k: tape.const(v) for k, v in inputs.items()}
    p = {k: tape.param(v, k) for k, v in params.items()}
    return expr(tape, x, p), tape


def value_and_grad(expr: Expr, inputs: Mapping[str, np.ndarray],
                   params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    out, tape = eval_forward(expr, inputs, params)
    return float(out.data), backprop(tape, out)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    failures: list[tuple[str, tuple[int, ...], float, float]] = field(default_factory=list)


def grad_check(expr: Expr, inputs: Mapping[str, np.ndarray], params: Mapping[str, np.ndarray],
               tolerance: float = 1e-6, h: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop against central differences on every parameter coordinate.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    coordinates whose true gradient is zero from dividing noise by noise.
    """
    _, analytic = value_and_grad(expr, inputs, params)
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def f():
        out, _ = eval_forward(expr, inputs, work)
        return float(out.data)

    worst_err, worst = 0.0, None
    failures = []
    for name, arr in work.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            num = (fp - fm) / (2 * h)
            ana = float(analytic[name][idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if err > worst_err:
                worst_err, worst = err, (name, idx)
            if err >= tolerance:
                failures.append((name, idx, ana, num))
    return GradCheckReport(not failures, worst_err, worst, failures)


# ----------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step. Inputs are not mutated."""
    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeMismatchError(f"adam: grad {g.shape} vs param {np.shape(p)} for {k!r}")
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, step, state.lr, state.beta1, state.beta2, state.eps)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))
