"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every value in the library is a :class:`Tensor`. Operations record their
parents and a closure that maps the output gradient to parent gradients;
:func:`backward` sweeps the recorded graph in reverse construction order,
so gradient accumulation is deterministic.
"""

from __future__ import annotations

import contextlib
import itertools
import logging
import math
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
STD_FLOOR = 1e-4

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording a graph (values are unchanged)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "grad", "requires_grad", "id")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.item())

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_CONST = Tensor(np.zeros(()))


def _node(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.id = next(_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # constants are dropped now so that later unfreezing cannot leak gradient into them
        out.parents = tuple(p if p.requires_grad else _CONST for p in parents)
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


# -- linear algebra ----------------------------------------------------------


def matmul(x, w) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"matmul: shape mismatch {x.shape} vs {w.shape}")

    def back(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        return gx, gw

    return _node(x.value @ w.value, (x, w), back)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` for a batch ``x`` of shape (n, d_in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine: shape mismatch {x.shape} vs {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine: bias shape mismatch {b.shape} vs {(w.shape[1],)}")

    def back(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _node(x.value @ w.value + b.value, (x, w, b), back)


# -- elementwise unary -------------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a) -> Tensor:
    a = as_tensor(a)
    # exp(min(x, 0)) is both the negative branch (+1) and the derivative everywhere
    e = np.exp(np.minimum(a.value, 0.0))
    out = np.maximum(a.value, 0.0) + (e - 1.0)
    return _node(out, (a,), lambda g: (g * e,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    out = np.logaddexp(0.0, v)
    return _node(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * v)),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside the range."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).value)


# -- reductions and shape ----------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ValueError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _node(np.concatenate([t.value for t in tensors], axis=ax), tensors, back)


def take(a, index) -> Tensor:
    """Basic indexing/slicing with a scatter-add backward."""
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def back(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(a.value[index]), (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"stack: shape mismatch {shape} vs {t.shape}")

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.value for t in tensors], axis=axis), tensors, back)


# -- distributions -----------------------------------------------------------


def _check_std(name: str, std: Tensor) -> None:
    if not np.all(std.value > 0):
        raise ValueError(f"{name}: stddev must be strictly positive")


def gaussian_log_prob(x, mean_, std) -> Tensor:
    """Diagonal Gaussian log-density, summed over the last axis."""
    x, mean_, std = as_tensor(x), as_tensor(mean_), as_tensor(std)
    _check_std("gaussian_log_prob", std)
    z = (x - mean_) / std
    return sum(-0.5 * square(z) - log(std) - 0.5 * LOG_2PI, axis=-1)


def diag_gaussian_kl(mean_p, std_p, mean_q, std_q) -> Tensor:
    """KL(p || q) between diagonal Gaussians, summed over the last axis."""
    mean_p, std_p = as_tensor(mean_p), as_tensor(std_p)
    mean_q, std_q = as_tensor(mean_q), as_tensor(std_q)
    _check_std("diag_gaussian_kl", std_p)
    _check_std("diag_gaussian_kl", std_q)
    var_q = square(std_q)
    terms = log(std_q / std_p) + (square(std_p) + square(mean_p - mean_q)) / (2.0 * var_q) - 0.5
    return sum(terms, axis=-1)


def reparam_sample(mean_, std, noise) -> Tensor:
    """``mean + std * noise`` with ``noise`` treated as a constant."""
    mean_, std = as_tensor(mean_), as_tensor(std)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mean_.shape or std.shape != mean_.shape:
        raise ValueError(f"reparam_sample: shape mismatch {mean_.shape} vs {std.shape} vs {noise.shape}")
    return mean_ + std * Tensor(noise)


def positive_std(raw) -> Tensor:
    return softplus(raw) + STD_FLOOR


# -- backward ----------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    seen = {root.id: root}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack_.append(p)
    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
    for nid in sorted(seen, reverse=True):
        node = seen[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(p.id)
            grads[p.id] = pg if prev is None else prev + pg


# -- parameters and optimisation ---------------------------------------------


class ParameterSet:
    """Named trainable arrays plus Adam moment accumulators and a step counter."""

    def __init__(self) -> None:
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for n, t in self.params.items()
        }

    @contextlib.contextmanager
    def frozen(self) -> Iterator[None]:
        """Treat every parameter as a constant inside the block."""
        for t in self.params.values():
            t.requires_grad = False
        try:
            yield
        finally:
            for t in self.params.values():
                t.requires_grad = True

    def values(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, t in self.params.items():
            if values[n].shape != t.shape:
                raise ValueError(f"{n}: shape mismatch {values[n].shape} vs {t.shape}")
            t.value = np.array(values[n], dtype=np.float64)

    def size(self) -> int:
        return int(np.sum([t.value.size for t in self.params.values()]))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(float(np.sum([np.sum(g * g) for g in grads.values()])))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm is None or not math.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {n: g * scale for n, g in grads.items()}, norm


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """Apply one bias-corrected Adam update. Returns False if the step was skipped."""
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        logger.warning("non-finite gradient; adam step skipped at step %d", params.step)
        return False
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True
