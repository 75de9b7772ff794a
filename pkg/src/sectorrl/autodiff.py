"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is an implicit tape: every operation stamps its output with a
monotonically increasing sequence number, so creation order is a valid
topological order and ``backward`` just walks the reachable nodes in
reverse. Custom nodes (used for quantum circuits differentiated by the
parameter-shift rule) register a forward callback and a vector-Jacobian
callback and then participate in the backward pass like any primitive.

All data is float64; gradients accumulate into ``Tensor.grad`` until the
owner resets them.
"""
from __future__ import annotations

import itertools

import numpy as np


class ContractError(ValueError):
    """An operation was called outside its contract (shapes, arity, domain)."""


_SEQ = itertools.count()
_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (rollouts, backtests)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op", "_seq")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._vjp = vjp
        self._op = op
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = self._op or ("param" if self.requires_grad else "const")
        return f"Tensor(shape={self.data.shape}, op={tag})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*tensors) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(t.requires_grad or t._vjp is not None for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to a broadcast operand's original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, vjp, op) -> Tensor:
    if _tracked(*parents):
        return Tensor(data, parents=parents, vjp=vjp, op=op)
    return Tensor(data)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _make(out, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _make(-a.data, (a,), vjp, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _make(out, (a, b), vjp, "matmul")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp, "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), vjp, "relu")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), vjp, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), vjp, "log_softmax")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, a.data.shape).copy(),)

    return _make(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx / count, a.data.shape).copy(),)

    return _make(out, (a,), vjp, "mean")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def vjp(g):
        return _unbroadcast(g * take_a, a.data.shape), _unbroadcast(g * ~take_a, b.data.shape)

    return _make(np.where(take_a, a.data, b.data), (a, b), vjp, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def vjp(g):
        return _unbroadcast(g * take_a, a.data.shape), _unbroadcast(g * ~take_a, b.data.shape)

    return _make(np.where(take_a, a.data, b.data), (a, b), vjp, "minimum")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), vjp, "clip")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(out, tuple(ts), vjp, "concat")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(out, (a,), vjp, "getitem")


def gather(a, index: np.ndarray, axis: int) -> Tensor:
    """take_along_axis with a scatter-add adjoint."""
    a = as_tensor(a)
    idx = np.asarray(index)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def vjp(g):
        gx = np.zeros_like(a.data)
        grid = list(np.indices(idx.shape))
        grid[axis] = idx
        np.add.at(gx, tuple(grid), g)
        return (gx,)

    return _make(out, (a,), vjp, "gather")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), vjp, "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)

    def vjp(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _make(out, (a,), vjp, "swapaxes")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned gain and bias."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


# ---------------------------------------------------------------------------
# custom nodes


_CUSTOM_REGISTRY: dict[int, "CustomOp"] = {}
_CUSTOM_IDS = itertools.count(1)


class CustomOp:
    """A differentiable node defined by a forward callback and a VJP callback.

    The VJP receives the upstream cotangent followed by the forward input
    arrays and must return one cotangent per input (None for inputs that do
    not need gradients).
    """

    def __init__(self, name: str, forward_fn, vjp_fn):
        self.name = name
        self.forward_fn = forward_fn
        self.vjp_fn = vjp_fn
        self.op_id = next(_CUSTOM_IDS)

    def __call__(self, *inputs) -> Tensor:
        ts = tuple(as_tensor(t) for t in inputs)
        out = np.asarray(self.forward_fn(*[t.data for t in ts]), dtype=np.float64)
        if not _tracked(*ts):
            return Tensor(out)
        datas = tuple(t.data for t in ts)

        def vjp(g):
            grads = self.vjp_fn(g, *datas)
            if not isinstance(grads, (tuple, list)) or len(grads) != len(ts):
                raise ContractError(
                    f"custom op '{self.name}': vjp returned {0 if not isinstance(grads, (tuple, list)) else len(grads)}"
                    f" cotangents for {len(ts)} inputs"
                )
            return tuple(grads)

        return Tensor(out, parents=ts, vjp=vjp, op=f"custom:{self.name}")


def register_custom(name: str, forward_fn, vjp_fn) -> CustomOp:
    op = CustomOp(name, forward_fn, vjp_fn)
    _CUSTOM_REGISTRY[op.op_id] = op
    return op


# ---------------------------------------------------------------------------
# backward


class Tape:
    """Creation-ordered record of the nodes reachable from a root tensor.

    Sequence numbers are assigned at construction time, so sorting by them
    yields a topological order by construction (inputs always precede
    outputs).
    """

    def __init__(self, root: Tensor):
        seen: dict[int, Tensor] = {id(root): root}
        stack = [root]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if id(p) not in seen:
                    seen[id(p)] = p
                    stack.append(p)
        self.nodes = sorted(seen.values(), key=lambda t: t._seq)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d p into ``.grad`` of every reachable tensor."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = Tape(loss)
    for node in tape.nodes:
        if node._vjp is not None:
            node.grad = None  # clear stale intermediate gradients
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        if len(grads) != len(node._parents):
            raise ContractError(f"op '{node._op}': vjp arity {len(grads)} != {len(node._parents)} inputs")
        for parent, g in zip(node._parents, grads):
            if g is None or not (parent.requires_grad or parent._vjp is not None):
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != parent.data.shape:
                raise ContractError(
                    f"op '{node._op}': cotangent shape {g.shape} != input shape {parent.data.shape}"
                )
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adaptive-moment optimizer with bias correction; deterministic."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = total**0.5
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
