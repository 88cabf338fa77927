"""Small reverse-mode autodiff over float64 numpy arrays.

Only the handful of ops the encoders, the contrastive objective and the
adapter need are provided. Ops are recorded on the active :class:`GradTape`
whenever at least one input requires a gradient::

    tape = GradTape()
    with tape:
        loss = (p * p).sum()
    grads = backward(loss, tape)
    grads[p]  # == 2 * p.data
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DomainError, ShapeError

_ACTIVE: list["GradTape"] = []


class Tensor:
    """A dense float64 array that may take part in gradient recording.

    Equality and hashing are by identity so tensors can key gradient dicts.
    """

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {list(self.shape)}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
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
        return mul(self, reciprocal(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of ops applied while the tape is active."""

    def __init__(self):
        # (output, inputs, vjp) triples in application order
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.records.append((out, inputs, vjp))


def _emit(value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, recording it if any input is tracked."""
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=tracked)
    if tracked and _ACTIVE:
        _ACTIVE[-1].record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss: Tensor, tape: GradTape, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse and accumulate d loss / d tensor.

    Returns gradients for every tracked leaf. Tensors listed in ``params`` that
    the loss does not depend on get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    produced = set()
    for out, inputs, vjp in reversed(tape.records):
        produced.add(out)
        g = grads.get(out)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=np.float64), inp.shape)
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    result = {t: g for t, g in grads.items() if t.requires_grad and t not in produced}
    if params is not None:
        result = {p: result.get(p, np.zeros_like(p.data)) for p in params}
    return result


# --------------------------------------------------------------------- ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    val = 1.0 / a.data
    return _emit(val, (a,), lambda g: (-g * val * val,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {list(a.shape)} and {list(b.shape)} do not agree")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit(a.data.sum(axis=axis), (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    val = np.exp(a.data)
    return _emit(val, (a,), lambda g: (g * val,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def diagonal(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal needs a square matrix, got {list(a.shape)}")
    n = a.shape[0]

    def vjp(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _emit(np.diagonal(a.data).copy(), (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    val = shifted - lse
    soft = np.exp(val)
    return _emit(val, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(v, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """exp(v_i / t) / sum_j exp(v_j / t), max-shifted for stability."""
    if not temperature > 0:
        raise DomainError(f"softmax temperature must be positive, got {temperature}")
    v = as_tensor(v)
    z = v.data / temperature
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    val = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return ((val * (g - (g * val).sum(axis=axis, keepdims=True))) / temperature,)

    return _emit(val, (v,), vjp)


def l2_normalize(v, axis: int = -1) -> Tensor:
    """Scale ``v`` to unit Euclidean norm along ``axis``."""
    v = as_tensor(v)
    norm = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise DegenerateInputError("cannot normalize a zero vector")
    val = v.data / norm

    def vjp(g):
        return ((g - val * (g * val).sum(axis=axis, keepdims=True)) / norm,)

    return _emit(val, (v,), vjp)


# ---------------------------------------------------------------- optimizers


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """In-place ``p <- p - lr * g``."""
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    for p, g in zip(params, grads, strict=True):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {list(np.shape(g))} does not match parameter {list(p.shape)}")
        p.data -= lr * g


class Adam:
    """Adam with bias-corrected moments and optional decoupled weight decay."""

    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if not lr > 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads, strict=True)):
            if p.shape != np.shape(g):
                raise ShapeError(f"gradient shape {list(np.shape(g))} does not match parameter {list(p.shape)}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))
