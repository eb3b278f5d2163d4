"""Vectorized forward-mode dual numbers with optional second-order parts.

A :class:`Dual` carries a value array of shape S, the derivatives with respect
to p seed directions (shape S + (p,)) and, when second order is requested,
the second derivatives (shape S + (p, p)). Propagating the second-order part
alongside the first ("forward over forward") yields exact Hessians of
small element functions, which is all the NLP layer needs.

Dual numbers take part in numpy ufuncs, so element functions may be written
with ``np.sin``, ``np.exp``, ``@`` and friends. Indexing and reductions act on
the value axes only.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["Dual", "ad_eval", "concatenate", "constant", "seed", "stack", "value_of"]


class Dual:
    __slots__ = ("val", "grad", "hess")

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        # Lets np.sin(d), ndarray + d and similar calls produce duals.
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        handler = _UFUNCS.get(ufunc)
        if handler is None:
            return NotImplemented
        return handler(*inputs)

    def __init__(self, val, grad, hess=None):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = None if hess is None else np.asarray(hess, dtype=float)

    # -- shape helpers -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    @property
    def n_dir(self) -> int:
        return self.grad.shape[-1]

    @property
    def second_order(self) -> bool:
        return self.hess is not None

    def __len__(self) -> int:
        return len(self.val)

    def __repr__(self) -> str:
        return f"Dual(val={self.val!r}, n_dir={self.n_dir}, second_order={self.second_order})"

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return constant(other, self.n_dir, self.second_order)

    # -- arithmetic ----------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __pos__(self):
        return self

    def __add__(self, other):
        if not isinstance(other, Dual):
            c = np.asarray(other, dtype=float)
            val = self.val + c
            grad = np.broadcast_to(self.grad, val.shape + (self.n_dir,))
            hess = None if self.hess is None else np.broadcast_to(
                self.hess, val.shape + (self.n_dir,) * 2)
            return Dual(val, grad, hess)
        hess = None
        if self.hess is not None and other.hess is not None:
            hess = self.hess + other.hess
        return Dual(self.val + other.val, self.grad + other.grad, hess)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Dual):
            c = np.asarray(other, dtype=float)
            hess = None if self.hess is None else self.hess * c[..., None, None]
            return Dual(self.val * c, self.grad * c[..., None], hess)
        a, b = self, other
        val = a.val * b.val
        grad = a.grad * b.val[..., None] + b.grad * a.val[..., None]
        hess = None
        if a.hess is not None and b.hess is not None:
            cross = a.grad[..., :, None] * b.grad[..., None, :]
            hess = (a.hess * b.val[..., None, None] + b.hess * a.val[..., None, None]
                    + cross + np.swapaxes(cross, -1, -2))
        return Dual(val, grad, hess)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        p = float(p)
        if p == 0.0:
            return self._lift(np.ones_like(self.val))
        if p == 1.0:
            return self
        if p == 2.0:
            return self * self
        v = self.val
        return self._chain(v**p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))

    def __rpow__(self, base):
        return exp(self * np.log(np.asarray(base, dtype=float)))

    def reciprocal(self) -> "Dual":
        v = self.val
        inv = 1.0 / v
        return self._chain(inv, -inv * inv, 2.0 * inv * inv * inv)

    def _chain(self, f0, f1, f2) -> "Dual":
        """Apply a scalar function with value f0 and derivatives f1, f2 elementwise."""
        grad = self.grad * f1[..., None]
        hess = None
        if self.hess is not None:
            hess = (self.hess * f1[..., None, None]
                    + f2[..., None, None] * self.grad[..., :, None] * self.grad[..., None, :])
        return Dual(f0, grad, hess)

    # -- comparisons act on values (needed for branching code) ---------
    def __lt__(self, other):
        return self.val < value_of(other)

    def __le__(self, other):
        return self.val <= value_of(other)

    def __gt__(self, other):
        return self.val > value_of(other)

    def __ge__(self, other):
        return self.val >= value_of(other)

    # -- linear algebra with constant matrices -------------------------
    def __matmul__(self, other):
        if isinstance(other, Dual):
            if self.ndim == 1 and other.ndim == 1:
                return (self * other).sum()
            raise TypeError("product of two dual matrices is not supported; use * and sum")
        B = np.asarray(other, dtype=float)
        if B.ndim == 1:
            return (self * B).sum(axis=self.ndim - 1)
        val = self.val @ B
        grad = np.einsum("...kp,kl->...lp", self.grad, B)
        hess = None if self.hess is None else np.einsum("...kpq,kl->...lpq", self.hess, B)
        return Dual(val, grad, hess)

    def __rmatmul__(self, other):
        A = np.asarray(other, dtype=float)
        if A.ndim == 1:
            return (self * A).sum(axis=self.ndim - 1) if self.ndim == 1 else self.T @ A
        if self.ndim != 1:
            raise TypeError("constant @ dual needs a 1-D dual vector")
        val = A @ self.val
        grad = A @ self.grad
        hess = None if self.hess is None else np.einsum("ij,jpq->ipq", A, self.hess)
        return Dual(val, grad, hess)

    # -- indexing and reductions ---------------------------------------
    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            raise IndexError("Ellipsis indexing is not supported on dual arrays")
        val = self.val[key]
        grad = self.grad[key]
        hess = None if self.hess is None else self.hess[key]
        return Dual(val, grad, hess)

    def sum(self, axis=None, **_):
        if axis is None:
            axes = tuple(range(self.ndim))
        else:
            axes = tuple(a % self.ndim for a in np.atleast_1d(axis))
        hess = None if self.hess is None else self.hess.sum(axis=axes)
        return Dual(self.val.sum(axis=axes), self.grad.sum(axis=axes), hess)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        val = self.val.reshape(shape)
        p = (self.n_dir,)
        hess = None if self.hess is None else self.hess.reshape(val.shape + p + p)
        return Dual(val, self.grad.reshape(val.shape + p), hess)

    @property
    def T(self):
        if self.ndim != 2:
            raise ValueError("transpose is only defined for 2-D dual arrays")
        hess = None if self.hess is None else self.hess.transpose(1, 0, 2, 3)
        return Dual(self.val.T, self.grad.transpose(1, 0, 2), hess)

    # -- numpy function protocol (np.sin(d) etc.) -----------------------
    def sin(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(c, -s, -c)

    def exp(self):
        e = np.exp(self.val)
        return self._chain(e, e, e)

    def log(self):
        v = self.val
        return self._chain(np.log(v), 1.0 / v, -1.0 / (v * v))

    def sqrt(self):
        r = np.sqrt(self.val)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.val))

    def tanh(self):
        t = np.tanh(self.val)
        d = 1.0 - t * t
        return self._chain(t, d, -2.0 * t * d)

    def square(self):
        return self * self

    def abs(self):
        # one-sided derivative +1 at the kink
        s = np.where(self.val >= 0, 1.0, -1.0)
        return self._chain(np.abs(self.val), s, np.zeros_like(s))

    __abs__ = abs

    def dot(self, other):
        return self @ other


def _unary(name: str) -> Callable:
    def fn(x):
        if isinstance(x, Dual):
            return getattr(x, name)()
        return getattr(np, name)(x)

    fn.__name__ = name
    fn.__doc__ = f"``np.{name}`` extended to dual numbers."
    return fn


sin = _unary("sin")
cos = _unary("cos")
exp = _unary("exp")
log = _unary("log")
sqrt = _unary("sqrt")
tanh = _unary("tanh")
square = _unary("square")


_UFUNCS = {
    np.add: lambda a, b: a + b if isinstance(a, Dual) else b + a,
    np.subtract: lambda a, b: a - b if isinstance(a, Dual) else (-b) + a,
    np.multiply: lambda a, b: a * b if isinstance(a, Dual) else b * a,
    np.true_divide: lambda a, b: a / b if isinstance(a, Dual) else b.__rtruediv__(a),
    np.power: lambda a, b: a ** b if isinstance(a, Dual) else b.__rpow__(a),
    np.matmul: lambda a, b: a @ b if isinstance(a, Dual) else b.__rmatmul__(a),
    np.negative: lambda a: -a,
    np.positive: lambda a: a,
    np.absolute: lambda a: a.abs(),
    np.sin: sin,
    np.cos: cos,
    np.exp: exp,
    np.log: log,
    np.sqrt: sqrt,
    np.tanh: tanh,
    np.square: square,
}


def value_of(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def constant(c, n_dir: int, second_order: bool = False) -> Dual:
    c = np.asarray(c, dtype=float)
    grad = np.zeros(c.shape + (n_dir,))
    hess = np.zeros(c.shape + (n_dir, n_dir)) if second_order else None
    return Dual(c, grad, hess)


def seed(x, second_order: bool = False) -> Dual:
    """Independent variables: the last axis of ``x`` is differentiated.

    For ``x`` of shape (..., n) the result carries n directions, with the
    identity seed broadcast over the leading axes.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    grad = np.broadcast_to(np.eye(n), x.shape + (n,)).copy()
    hess = np.zeros(x.shape + (n, n)) if second_order else None
    return Dual(x, grad, hess)


def stack(items: Sequence, axis: int = -1) -> Dual:
    """np.stack for a mix of duals and constants."""
    ref = next((it for it in items if isinstance(it, Dual)), None)
    if ref is None:
        return np.stack([np.asarray(it, dtype=float) for it in items], axis=axis)
    duals = [ref._lift(it) for it in items]
    shape = np.broadcast_shapes(*[d.shape for d in duals])
    duals = [d if d.shape == shape else d + np.zeros(shape) for d in duals]
    ax = axis % (len(shape) + 1)
    val = np.stack([d.val for d in duals], axis=ax)
    grad = np.stack([d.grad for d in duals], axis=ax)
    hess = None
    if all(d.hess is not None for d in duals):
        hess = np.stack([d.hess for d in duals], axis=ax)
    return Dual(val, grad, hess)


def concatenate(items: Sequence, axis: int = -1) -> Dual:
    """np.concatenate along a value axis for a mix of duals and constants."""
    ref = next((it for it in items if isinstance(it, Dual)), None)
    if ref is None:
        return np.concatenate([np.asarray(it, dtype=float) for it in items], axis=axis)
    duals = [ref._lift(it) for it in items]
    ax = axis % ref.ndim
    val = np.concatenate([d.val for d in duals], axis=ax)
    grad = np.concatenate([d.grad for d in duals], axis=ax)
    hess = None
    if all(d.hess is not None for d in duals):
        hess = np.concatenate([d.hess for d in duals], axis=ax)
    return Dual(val, grad, hess)


def ad_eval(function: Callable, x, order: int = 1) -> dict:
    """Value and derivatives of ``function`` at the 1-D point ``x``.

    Returns a dict with ``value`` and ``jacobian`` (the gradient for scalar
    outputs); with ``order=2`` also ``hessian`` of shape out_shape + (n, n).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = np.asarray(x, dtype=float).ravel()
    d = seed(x, second_order=order == 2)
    out = function(d)
    if not isinstance(out, Dual):
        out = constant(out, x.size, order == 2)
    res = {"value": out.val if out.ndim else float(out.val), "jacobian": out.grad}
    if order == 2:
        res["hessian"] = out.hess
    return res
