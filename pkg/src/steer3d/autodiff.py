"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` objects are recorded on the active :class:`Tape`
while one is open.  ``tape.backward(loss)`` walks the records in reverse and
accumulates gradients into every :class:`Param` reached.

Example::

    w = Param("w", np.array([[2.0]]))
    with Tape() as tape:
        loss = ((w * 3.0) - 1.0).square().sum()
    tape.backward(loss)
    w.grad  # [[30.0]]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class TapeError(RuntimeError):
    """Raised for backward calls without a usable recorded forward pass."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when backward produces NaN/inf in a parameter gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.param_name = name


_ACTIVE: list["Tape"] = []


def _record(out: "Tensor", parents: tuple["Tensor", ...], backward: Callable[[np.ndarray], None]) -> "Tensor":
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append((out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def _acc(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # arithmetic -----------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.value + other.value)

        def backward(g):
            self._acc(_unbroadcast(g, self.shape))
            other._acc(_unbroadcast(g, other.shape))

        return _record(out, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.value - other.value)

        def backward(g):
            self._acc(_unbroadcast(g, self.shape))
            other._acc(_unbroadcast(-g, other.shape))

        return _record(out, (self, other), backward)

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.value)
        return _record(out, (self,), lambda g: self._acc(-g))

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.value * other.value)

        def backward(g):
            self._acc(_unbroadcast(g * other.value, self.shape))
            other._acc(_unbroadcast(g * self.value, other.shape))

        return _record(out, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.value / other.value)

        def backward(g):
            self._acc(_unbroadcast(g / other.value, self.shape))
            other._acc(_unbroadcast(-g * self.value / other.value**2, other.shape))

        return _record(out, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.value @ other.value)

        def backward(g):
            self._acc(g @ other.value.T)
            other._acc(self.value.T @ g)

        return _record(out, (self, other), backward)

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.value[key])

        def backward(g):
            full = np.zeros_like(self.value)
            np.add.at(full, key, g)
            self._acc(full)

        return _record(out, (self,), backward)

    # elementwise ----------------------------------------------------------
    def square(self) -> "Tensor":
        out = Tensor(self.value * self.value)
        return _record(out, (self,), lambda g: self._acc(2.0 * self.value * g))

    def abs(self) -> "Tensor":
        out = Tensor(np.abs(self.value))
        return _record(out, (self,), lambda g: self._acc(np.sign(self.value) * g))

    def relu(self) -> "Tensor":
        mask = self.value > 0
        out = Tensor(np.where(mask, self.value, 0.0))
        return _record(out, (self,), lambda g: self._acc(g * mask))

    def tanh(self) -> "Tensor":
        y = np.tanh(self.value)
        out = Tensor(y)
        return _record(out, (self,), lambda g: self._acc(g * (1.0 - y * y)))

    def sigmoid(self) -> "Tensor":
        y = 0.5 * (1.0 + np.tanh(0.5 * self.value))
        out = Tensor(y)
        return _record(out, (self,), lambda g: self._acc(g * y * (1.0 - y)))

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            y = np.exp(self.value)
        out = Tensor(y)
        return _record(out, (self,), lambda g: self._acc(g * y))

    def clip(self, lo: float, hi: float) -> "Tensor":
        inside = (self.value >= lo) & (self.value <= hi)
        out = Tensor(np.clip(self.value, lo, hi))
        return _record(out, (self,), lambda g: self._acc(g * inside))

    # reductions and reshaping ---------------------------------------------
    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims))

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._acc(np.broadcast_to(g, self.shape))

        return _record(out, (self,), backward)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        # gradient routed to the first maximal entry
        arg = np.argmax(self.value, axis=axis)
        picked = np.take_along_axis(self.value, np.expand_dims(arg, axis), axis=axis)
        out = Tensor(picked if keepdims else np.squeeze(picked, axis=axis))

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(self.value)
            np.put_along_axis(full, np.expand_dims(arg, axis), g, axis=axis)
            self._acc(full)

        return _record(out, (self,), backward)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        out = Tensor(self.value.reshape(*shape))
        return _record(out, (self,), lambda g: self._acc(g.reshape(old)))

    def take(self, index: np.ndarray) -> "Tensor":
        """Gather rows: ``out[...] = self[index[...]]`` along axis 0."""
        index = np.asarray(index)
        out = Tensor(self.value[index])

        def backward(g):
            full = np.zeros_like(self.value)
            np.add.at(full, index, g)
            self._acc(full)

        return _record(out, (self,), backward)

    @property
    def T(self) -> "Tensor":
        out = Tensor(self.value.T)
        return _record(out, (self,), lambda g: self._acc(g.T))


class Param(Tensor):
    """Named trainable leaf with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    x = as_tensor(x)
    out = Tensor(np.asarray(matrix @ x.value))
    return _record(out, (x,), lambda g: x._acc(np.asarray(matrix.T @ g)))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis))
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            p._acc(piece)

    return _record(out, tuple(parts), backward)


class Tape:
    """Recording context for one forward pass; supports exactly one backward."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self.consumed = False
        self.closed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)
        self.closed = True

    def backward(self, loss: Tensor, check_finite: Iterable[Param] = ()) -> None:
        if self.consumed:
            raise TapeError("tape already consumed; run a new forward pass")
        if not self.nodes or not loss.requires_grad:
            raise TapeError("nothing recorded for this loss")
        if loss.value.size != 1:
            raise TapeError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)
            out.grad = None
        self.nodes.clear()
        self.consumed = True
        for p in check_finite:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(p.name)


def finite_difference_gradient(
    fn: Callable[[], float], params: Sequence[Tensor], step: float = 1e-5
) -> list[np.ndarray]:
    """Central differences of ``fn`` with respect to every scalar in ``params``.

    ``fn`` is evaluated with each entry of each tensor's ``value`` nudged in
    place by ``±step``; the original value is restored afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn())
            flat[i] = orig - step
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
