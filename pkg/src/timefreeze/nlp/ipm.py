"""Primal-dual interior-point method for bound and equality constrained NLPs.

Each iteration solves the condensed primal-dual Newton system

    [ W + Sigma + dw I    J^T  ] [dx ]     [ grad f + J^T nu - mu/s_L + mu/s_U ]
    [ J                  -dc I ] [dnu] = - [ c                                 ]

with Sigma = z_L/s_L + z_U/s_U, by a dense symmetric indefinite LDL^T
factorization. The inertia of the factor decides whether the Hessian shift dw
has to grow. Steps obey the fraction-to-boundary rule and are accepted by a
backtracking line search on the l1 merit function

    phi(x) = f(x) - mu sum log s_L - mu sum log s_U + theta ||c(x)||_1.

The barrier parameter starts at 0.1 and is multiplied by 0.2 whenever the
barrier problem is solved to within 10 mu, down to tol / 10.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Callable, Optional

import numpy as np
from scipy.linalg import lapack

from .problem import KktPoint, SmoothNlp

__all__ = [
    "IpmOptions",
    "LineSearchFailure",
    "MaxIterations",
    "NlpSolverError",
    "SingularSystem",
    "solve",
]


class NlpSolverError(RuntimeError):
    """Base class; ``point`` holds the last iterate for warm starts."""

    def __init__(self, message: str, point: KktPoint):
        super().__init__(message)
        self.point = point


class MaxIterations(NlpSolverError):
    pass


class LineSearchFailure(NlpSolverError):
    pass


class SingularSystem(NlpSolverError):
    pass


@dataclass
class IpmOptions:
    tol: float = 1e-8
    max_iter: int = 500
    mu_init: float = 0.1
    mu_factor: float = 0.2
    kappa_eps: float = 10.0
    tau: float = 0.995
    armijo: float = 1e-4
    min_step: float = 1e-12
    delta_w_init: float = 1e-8
    delta_w_max: float = 1e40
    delta_c: float = 1e-8
    kappa_sigma: float = 1e10
    exact_hessian: bool = True
    log: Optional[IO[str]] = None
    callback: Optional[Callable] = None  # called as callback(iteration, x) after each step


def _push_inside(x, lo, hi):
    """Clip x into [lo + d, hi - d] with d = min(1e-2 width, 1e-4) per variable."""
    x = np.array(x, dtype=float)
    fl, fu = np.isfinite(lo), np.isfinite(hi)
    if np.any(fl & fu & (hi <= lo)):
        raise ValueError("fixed variables (lower == upper) are not supported; remove them")
    width = np.where(fl & fu, hi - lo, np.inf)
    margin = np.minimum(1e-2 * width, 1e-4)
    x[fl] = np.maximum(x[fl], lo[fl] + margin[fl])
    x[fu] = np.minimum(x[fu], hi[fu] - margin[fu])
    return x


def _inertia(lu: np.ndarray, ipiv: np.ndarray) -> tuple:
    """(positive, negative, zero) eigenvalue counts of D from a lower dsytrf."""
    n = lu.shape[0]
    pos = neg = zero = 0
    eps = 0.0  # only exact zero pivots; Sigma spans many decades near convergence
    i = 0
    while i < n:
        if ipiv[i] > 0:
            d = lu[i, i]
            if abs(d) <= eps:
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            i += 1
        else:
            a, b, c = lu[i, i], lu[i + 1, i], lu[i + 1, i + 1]
            for ev in np.linalg.eigvalsh(np.array([[a, b], [b, c]])):
                if abs(ev) <= eps:
                    zero += 1
                elif ev > 0:
                    pos += 1
                else:
                    neg += 1
            i += 2
    return pos, neg, zero


def _residuals(nlp, ev, nu, zL, zU, sL, sU, fl, fu, mu):
    rd = ev.grad + ev.jac.T @ nu
    rd[fl] -= zL
    rd[fu] += zU
    stat = float(np.max(np.abs(rd), initial=0.0))
    feas = float(np.max(np.abs(ev.c), initial=0.0))
    comp = float(max(np.max(np.abs(sL * zL - mu), initial=0.0), np.max(np.abs(sU * zU - mu), initial=0.0)))
    return stat, feas, comp


def solve(nlp: SmoothNlp, x0, tol: float = 1e-8, max_iter: int = 500,
          warm: Optional[KktPoint] = None, options: Optional[IpmOptions] = None,
          mu_init: Optional[float] = None) -> KktPoint:
    """Solve ``nlp`` from ``x0`` (or from the primal-dual point ``warm``)."""
    opt = options or IpmOptions()
    opt = IpmOptions(**{**opt.__dict__, "tol": tol, "max_iter": max_iter})
    if mu_init is not None:
        opt.mu_init = float(mu_init)
    n, m = nlp.n, nlp.m
    lo, hi = nlp.lower, nlp.upper
    fl, fu = np.isfinite(lo), np.isfinite(hi)
    x = _push_inside(warm.x if warm is not None else x0, lo, hi)
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    if warm is not None:
        nu = np.array(warm.nu, dtype=float)
        zL = np.maximum(np.array(warm.z_L, dtype=float)[fl], 1e-20)
        zU = np.maximum(np.array(warm.z_U, dtype=float)[fu], 1e-20)
    else:
        nu = np.zeros(m)
        zL = np.ones(int(fl.sum()))
        zU = np.ones(int(fu.sum()))

    mu = opt.mu_init
    mu_min = opt.tol / 10.0
    delta_w_last = 0.0
    history = []

    def point(status, it, ev, stat, feas, comp):
        zl_full = np.zeros(n)
        zu_full = np.zeros(n)
        zl_full[fl] = zL
        zu_full[fu] = zU
        return KktPoint(x.copy(), nu.copy(), zl_full, zu_full, it, ev.f, stat, feas, comp, mu,
                        status, history)

    ev = nlp.evaluate(x, nu, order=2, constraint_curvature=opt.exact_hessian)
    for it in range(opt.max_iter + 1):
        sL, sU = (x - lo)[fl], (hi - x)[fu]
        stat, feas, comp0 = _residuals(nlp, ev, nu, zL, zU, sL, sU, fl, fu, 0.0)
        if max(stat, feas, comp0) <= opt.tol:
            return point("solved", it, ev, stat, feas, comp0)
        # barrier update (possibly several times at once)
        while mu > mu_min:
            s_mu, f_mu, c_mu = _residuals(nlp, ev, nu, zL, zU, sL, sU, fl, fu, mu)
            if max(s_mu, f_mu, c_mu) > opt.kappa_eps * mu:
                break
            mu = max(mu_min, opt.mu_factor * mu)
        if it == opt.max_iter:
            raise MaxIterations(f"no convergence within {opt.max_iter} iterations",
                                point("max_iter", it, ev, stat, feas, comp0))

        sigma = np.zeros(n)
        sigma[fl] += zL / sL
        sigma[fu] += zU / sU
        rx = ev.grad + ev.jac.T @ nu
        rx[fl] -= mu / sL
        rx[fu] += mu / sU
        rhs = -np.concatenate([rx, ev.c])

        # factorize with inertia correction
        K = np.zeros((n + m, n + m))
        K[:n, :n] = ev.hess
        K[:n, :n][np.diag_indices(n)] += sigma
        K[n:, :n] = ev.jac
        K[:n, n:] = ev.jac.T
        delta_w, delta_c = 0.0, 0.0
        while True:
            Kr = K.copy()
            if delta_w:
                Kr[np.arange(n), np.arange(n)] += delta_w
            if delta_c:
                Kr[np.arange(n, n + m), np.arange(n, n + m)] -= delta_c
            lu, ipiv, info = lapack.dsytrf(Kr, lower=1)
            if info < 0:
                raise SingularSystem("invalid argument to the factorization",
                                     point("singular", it, ev, stat, feas, comp0))
            pos, neg, zero = _inertia(lu, ipiv) if info == 0 else (0, 0, 1)
            if pos == n and neg == m and zero == 0:
                break
            if zero and m and delta_c == 0.0:
                # zero pivots point at rank-deficient constraints: regularize the dual block first
                delta_c = opt.delta_c * mu**0.25
                continue
            if delta_w == 0.0:
                delta_w = max(opt.delta_w_init, delta_w_last / 4.0)
            else:
                delta_w *= 2.0
            if delta_w > opt.delta_w_max:
                raise SingularSystem("Hessian shift exceeded its limit",
                                     point("singular", it, ev, stat, feas, comp0))
        if delta_w:
            delta_w_last = delta_w
        sol, info = lapack.dsytrs(lu, ipiv, rhs, lower=1)
        if info != 0 or not np.all(np.isfinite(sol)):
            raise SingularSystem("KKT solve failed", point("singular", it, ev, stat, feas, comp0))
        dx, dnu = sol[:n], sol[n:]
        dzL = mu / sL - zL - (zL / sL) * dx[fl]
        dzU = mu / sU - zU + (zU / sU) * dx[fu]

        def max_step(s, ds):
            neg_ = ds < 0
            if not np.any(neg_):
                return 1.0
            return float(min(1.0, np.min(-opt.tau * s[neg_] / ds[neg_])))

        a_pr = min(max_step(sL, dx[fl]), max_step(sU, -dx[fu]))
        a_du = min(max_step(zL, dzL), max_step(zU, dzU))

        # merit function and its directional derivative
        def barrier_obj(f, xx):
            s1, s2 = (xx - lo)[fl], (hi - xx)[fu]
            return f - mu * (np.sum(np.log(s1)) + np.sum(np.log(s2)))

        c1 = float(np.sum(np.abs(ev.c)))
        gphi = ev.grad.copy()
        gphi[fl] -= mu / sL
        gphi[fu] += mu / sU
        gdx = float(gphi @ dx)
        if c1 > 0:
            curv = float(dx @ (K[:n, :n] @ dx)) + delta_w * float(dx @ dx)
            theta_req = (gdx + 0.5 * max(curv, 0.0)) / (0.9 * c1)
            theta = max(theta_req, float(np.max(np.abs(nu + dnu), initial=0.0))) + 1e-6
        else:
            theta = 0.0
        phi0 = barrier_obj(ev.f, x) + theta * c1
        dphi = gdx - theta * c1

        alpha = a_pr
        accepted = False
        soc_tried = False
        n_ls = 0
        while alpha >= opt.min_step:
            x_try = x + alpha * dx
            f_try = nlp.objective(x_try)
            c_try = nlp.constraints(x_try)
            phi_try = barrier_obj(f_try, x_try) + theta * float(np.sum(np.abs(c_try)))
            if np.isfinite(phi_try) and phi_try <= phi0 + opt.armijo * alpha * dphi:
                accepted = True
                break
            if not soc_tried and alpha == a_pr and m:
                soc_tried = True
                # second-order correction: re-solve with the constraint values at the trial point
                rhs_soc = -np.concatenate([rx, alpha * ev.c + c_try])
                sol_soc, info = lapack.dsytrs(lu, ipiv, rhs_soc, lower=1)
                if info == 0 and np.all(np.isfinite(sol_soc)):
                    dx_soc = sol_soc[:n]
                    a_soc = min(max_step(sL, dx_soc[fl]), max_step(sU, -dx_soc[fu]))
                    x_soc = x + a_soc * dx_soc
                    f_soc = nlp.objective(x_soc)
                    c_soc = nlp.constraints(x_soc)
                    phi_soc = barrier_obj(f_soc, x_soc) + theta * float(np.sum(np.abs(c_soc)))
                    if np.isfinite(phi_soc) and phi_soc <= phi0 + opt.armijo * alpha * dphi:
                        dx = dx_soc
                        dnu = sol_soc[n:]
                        dzL = mu / sL - zL - (zL / sL) * dx[fl]
                        dzU = mu / sU - zU + (zU / sU) * dx[fu]
                        a_du = min(max_step(zL, dzL), max_step(zU, dzU))
                        alpha = a_soc
                        accepted = True
                        break
            alpha *= 0.5
            n_ls += 1
        if not accepted:
            raise LineSearchFailure(
                f"line search could not decrease the merit function (max step {a_pr:.3g}, "
                f"directional derivative {dphi:.3g})",
                                    point("line_search", it, ev, stat, feas, comp0))

        x = x + alpha * dx
        nu = nu + alpha * dnu
        zL = zL + a_du * dzL
        zU = zU + a_du * dzU
        # keep z within a factor kappa_sigma of the primal-dual centrality
        sL, sU = (x - lo)[fl], (hi - x)[fu]
        zL = np.clip(zL, mu / (opt.kappa_sigma * sL), opt.kappa_sigma * mu / sL)
        zU = np.clip(zU, mu / (opt.kappa_sigma * sU), opt.kappa_sigma * mu / sU)
        ev = nlp.evaluate(x, nu, order=2, constraint_curvature=opt.exact_hessian)
        rec = {"iter": it + 1, "mu": mu, "objective": ev.f, "stationarity": stat,
               "feasibility": feas, "complementarity": comp0, "alpha_pr": alpha,
               "alpha_du": a_du, "delta_w": delta_w, "ls": n_ls}
        history.append(rec)
        if opt.log is not None:
            opt.log.write(json.dumps(rec) + "\n")
        if opt.callback is not None:
            opt.callback(it + 1, x.copy())
    raise AssertionError("unreachable")  # pragma: no cover
