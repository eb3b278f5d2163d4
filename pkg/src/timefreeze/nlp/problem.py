"""Smooth NLPs assembled from small element functions.

    minimize    f(x)
    subject to  c(x) = 0,   lower <= x <= upper

Both f and c are sums of *blocks*. A block owns an integer index array of
shape (n_elem, n_local) that picks the local variables of each element, and
a function that maps a batched dual array of shape (n_elem, n_local) to the
element outputs. Objective blocks return shape (n_elem,) and are summed;
constraint blocks return (n_elem, n_out) and contribute n_elem * n_out rows in
element-major order. Derivatives come from :mod:`.ad`, evaluated for all
elements at once and scattered into dense arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .ad import Dual, seed

__all__ = [
    "Block",
    "DerivativeReport",
    "KktPoint",
    "SmoothNlp",
    "check_derivatives",
    "dense_nlp",
]


@dataclass(frozen=True, eq=False)
class Block:
    index: np.ndarray
    fun: Callable[[Dual], Dual]
    n_out: int = 1
    name: str = ""

    def __post_init__(self):
        idx = np.atleast_2d(np.asarray(self.index, dtype=np.intp))
        idx.setflags(write=False)
        object.__setattr__(self, "index", idx)

    @property
    def n_elem(self) -> int:
        return self.index.shape[0]

    @property
    def n_rows(self) -> int:
        return self.n_elem * self.n_out

    def evaluate(self, x: np.ndarray, order: int) -> Dual:
        local = x[self.index]
        if order == 0:
            out = self.fun(local)
            return out.val if isinstance(out, Dual) else np.asarray(out, dtype=float)
        d = seed(local, second_order=order == 2)
        out = self.fun(d)
        if not isinstance(out, Dual):
            out = d._lift(np.broadcast_to(np.asarray(out, dtype=float), (self.n_elem, self.n_out)))
        return out


@dataclass
class Evaluation:
    f: float
    grad: np.ndarray
    c: np.ndarray
    jac: np.ndarray
    hess: Optional[np.ndarray] = None


class SmoothNlp:
    """Twice differentiable NLP with equality constraints and variable bounds."""

    def __init__(self, n: int, objective: Sequence[Block] = (), constraints: Sequence[Block] = (),
                 lower=None, upper=None, name: str = "nlp"):
        self.n = int(n)
        self.objective_blocks = tuple(objective)
        self.constraint_blocks = tuple(constraints)
        self.lower = np.full(self.n, -np.inf) if lower is None else np.array(lower, dtype=float)
        self.upper = np.full(self.n, np.inf) if upper is None else np.array(upper, dtype=float)
        self.name = name
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lower > self.upper):
            i = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"lower bound exceeds upper bound at variable {i}")
        for b in self.objective_blocks + self.constraint_blocks:
            if b.index.size and (b.index.min() < 0 or b.index.max() >= self.n):
                raise ValueError(f"block {b.name!r} indexes outside the variable vector")
        for b in self.objective_blocks:
            if b.n_out != 1:
                raise ValueError("objective blocks must have one output per element")
        self.m = sum(b.n_rows for b in self.constraint_blocks)

    # -- plain evaluations -------------------------------------------------
    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(sum(np.sum(b.evaluate(x, 0)) for b in self.objective_blocks))

    def constraints(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.constraint_blocks:
            return np.zeros(0)
        return np.concatenate([np.reshape(b.evaluate(x, 0), -1) for b in self.constraint_blocks])

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x, order=1).grad

    def jacobian(self, x) -> np.ndarray:
        return self.evaluate(x, order=1).jac

    def lagrangian_hessian(self, x, nu, obj_factor: float = 1.0) -> np.ndarray:
        return self.evaluate(x, nu=nu, order=2, obj_factor=obj_factor).hess

    def jacobian_pattern(self) -> tuple:
        """(rows, cols) of the structurally nonzero Jacobian entries."""
        rows, cols = [], []
        r0 = 0
        for b in self.constraint_blocks:
            r = r0 + np.arange(b.n_rows).reshape(b.n_elem, b.n_out)
            rows.append(np.repeat(r[:, :, None], b.index.shape[1], axis=2).ravel())
            cols.append(np.repeat(b.index[:, None, :], b.n_out, axis=1).ravel())
            r0 += b.n_rows
        if not rows:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        pat = np.unique(np.stack([np.concatenate(rows), np.concatenate(cols)]), axis=1)
        return pat[0], pat[1]

    # -- full first/second order evaluation ---------------------------------
    def evaluate(self, x, nu=None, order: int = 1, obj_factor: float = 1.0,
                 constraint_curvature: bool = True) -> Evaluation:
        """Objective, gradient, constraints, dense Jacobian and (order 2) the
        Hessian of ``obj_factor * f + nu . c``.

        With ``constraint_curvature=False`` the constraint second derivatives
        are dropped (a Gauss-Newton style approximation).
        """
        x = np.asarray(x, dtype=float)
        n = self.n
        grad = np.zeros(n)
        hess = np.zeros((n, n)) if order == 2 else None
        fval = 0.0
        for b in self.objective_blocks:
            out = b.evaluate(x, 2 if order == 2 else 1)
            val = out.val.reshape(b.n_elem)
            g = out.grad.reshape(b.n_elem, -1)
            fval += float(val.sum())
            np.add.at(grad, b.index, g)
            if order == 2:
                H = obj_factor * out.hess.reshape(b.n_elem, g.shape[1], g.shape[1])
                _scatter_hess(hess, b.index, H)
        c = np.zeros(self.m)
        jac = np.zeros((self.m, n))
        if order == 2 and constraint_curvature:
            if nu is None:
                raise ValueError("multipliers are required for the Lagrangian Hessian")
            nu = np.asarray(nu, dtype=float)
        r0 = 0
        for b in self.constraint_blocks:
            want2 = order == 2 and constraint_curvature
            out = b.evaluate(x, 2 if want2 else 1)
            L = b.index.shape[1]
            val = out.val.reshape(b.n_elem, b.n_out)
            g = out.grad.reshape(b.n_elem, b.n_out, L)
            rows = slice(r0, r0 + b.n_rows)
            c[rows] = val.ravel()
            r_idx = r0 + np.arange(b.n_rows).reshape(b.n_elem, b.n_out)
            np.add.at(jac, (r_idx[:, :, None], b.index[:, None, :]), g)
            if want2:
                w = nu[rows].reshape(b.n_elem, b.n_out)
                H = np.einsum("ek,ekpq->epq", w, out.hess.reshape(b.n_elem, b.n_out, L, L))
                _scatter_hess(hess, b.index, H)
            r0 += b.n_rows
        return Evaluation(fval, grad, c, jac, hess)


def _scatter_hess(hess: np.ndarray, index: np.ndarray, H: np.ndarray) -> None:
    np.add.at(hess, (index[:, :, None], index[:, None, :]), H)


def dense_nlp(n: int, objective: Callable, constraints: Optional[Callable] = None, m: int = 0,
              lower=None, upper=None, name: str = "dense") -> SmoothNlp:
    """SmoothNlp from whole-vector callables f(x) -> scalar and c(x) -> (m,).

    The callables receive a 1-D dual vector and should use numpy operations.
    """
    idx = np.arange(n)[None, :]

    def fobj(d):
        out = objective(d[0])
        return out.reshape(1) if isinstance(out, Dual) else np.reshape(out, 1)

    blocks_c = ()
    if constraints is not None:
        if m <= 0:
            raise ValueError("m must be positive when constraints are given")

        def fcon(d):
            out = constraints(d[0])
            return out.reshape(1, m) if isinstance(out, Dual) else np.reshape(out, (1, m))

        blocks_c = (Block(idx, fcon, m, "constraints"),)
    return SmoothNlp(n, (Block(idx, fobj, 1, "objective"),), blocks_c, lower, upper, name)


@dataclass
class KktPoint:
    """Primal-dual point; the Lagrangian is f + nu . c - z_L (x - l) - z_U (u - x)."""

    x: np.ndarray
    nu: np.ndarray
    z_L: np.ndarray
    z_U: np.ndarray
    iterations: int = 0
    objective: float = float("nan")
    stationarity: float = float("nan")
    feasibility: float = float("nan")
    complementarity: float = float("nan")
    mu: float = float("nan")
    status: str = "unsolved"
    history: list = field(default_factory=list)

    @property
    def kkt_error(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class DerivativeReport:
    max_rel_gradient: float
    max_rel_jacobian: float
    flagged: list
    threshold: float

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def max_discrepancy(self) -> float:
        return max(self.max_rel_gradient, self.max_rel_jacobian)


def check_derivatives(nlp: SmoothNlp, x, fd_step: float = 1e-6, threshold: float = 1e-5,
                      floor: float = 1.0) -> DerivativeReport:
    """Compare AD gradient and Jacobian with central differences.

    The relative error of an entry is |ad - fd| / max(|ad|, |fd|, floor); the
    floor keeps tiny entries from producing meaningless ratios. Flagged
    entries are returned as (kind, row, col, ad, fd).
    """
    x = np.asarray(x, dtype=float)
    ev = nlp.evaluate(x, order=1)
    gfd = np.empty(nlp.n)
    jfd = np.empty((nlp.m, nlp.n))
    for j in range(nlp.n):
        e = np.zeros(nlp.n)
        e[j] = fd_step
        gfd[j] = (nlp.objective(x + e) - nlp.objective(x - e)) / (2 * fd_step)
        if nlp.m:
            jfd[:, j] = (nlp.constraints(x + e) - nlp.constraints(x - e)) / (2 * fd_step)

    def rel(a, b):
        return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)

    rg = rel(ev.grad, gfd)
    rj = rel(ev.jac, jfd) if nlp.m else np.zeros((0, nlp.n))
    flagged = [("gradient", 0, int(j), float(ev.grad[j]), float(gfd[j]))
               for j in np.flatnonzero(rg > threshold)]
    flagged += [("jacobian", int(i), int(j), float(ev.jac[i, j]), float(jfd[i, j]))
                for i, j in zip(*np.nonzero(rj > threshold))]
    return DerivativeReport(float(rg.max(initial=0.0)), float(rj.max(initial=0.0)), flagged, threshold)
