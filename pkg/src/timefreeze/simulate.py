"""Fixed-step simulation of time-frozen systems and recovery of physical time.

Integration runs in pseudo time on the augmented state y = (x, t). Samples
taken while the clock stands still belong to restitution phases and are
dropped by :func:`recover_physical`; what remains is the solution of the
original system with jumps, indexed by the clock value.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .dynamics import SIGN, StepMode, TimeFrozenSystem, eval_rhs, step_values

__all__ = [
    "EXPLICIT_EULER",
    "IMPLICIT_EULER",
    "RK4",
    "ConvergenceTable",
    "IntegrationError",
    "Jump",
    "PhysicalTrajectory",
    "Trajectory",
    "ZenoError",
    "analytic_bouncing_ball",
    "convergence_study",
    "detect_jumps",
    "fit_order",
    "integrate",
    "recover_physical",
    "required_pseudo_time",
    "terminal_state",
]

EXPLICIT_EULER = "explicit-euler"
RK4 = "rk4"
IMPLICIT_EULER = "implicit-euler"
SCHEMES = (EXPLICIT_EULER, RK4, IMPLICIT_EULER)
EVALS_PER_STEP = {EXPLICIT_EULER: 1, RK4: 4, IMPLICIT_EULER: 1}
FROZEN_THRESHOLD = 0.5

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ZenoError(RuntimeError):
    """Too many impacts before the requested time."""


def normalize_scheme(name: str) -> str:
    key = "".join(ch for ch in name.lower() if ch.isalnum())
    table = {"expliciteuler": EXPLICIT_EULER, "euler": EXPLICIT_EULER, "rk4": RK4,
             "rungekutta4": RK4, "impliciteuler": IMPLICIT_EULER}
    try:
        return table[key]
    except KeyError:
        raise ValueError(f"unknown integration scheme {name!r}") from None


@dataclass(eq=False)
class Trajectory:
    """Pseudo-time samples of the augmented state; the clock is the last column."""

    tau_grid: np.ndarray
    states: np.ndarray
    scheme: str
    h: float
    controls: Optional[np.ndarray] = None

    @property
    def clock(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def n_steps(self) -> int:
        return len(self.tau_grid) - 1


@dataclass(eq=False)
class PhysicalTrajectory:
    """Retained samples re-indexed by physical time, clock column removed."""

    t_grid: np.ndarray
    states: np.ndarray
    frozen_mask: np.ndarray  # per pseudo-time sample; True where dropped
    tau_grid: np.ndarray  # pseudo time of each retained sample

    @property
    def sample_index(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen_mask)

    def __len__(self) -> int:
        return len(self.t_grid)


def _controls_per_step(sys: TimeFrozenSystem, u, n_steps: int) -> Optional[np.ndarray]:
    if sys.n_u == 0:
        return None
    if u is None:
        return np.zeros((n_steps, sys.n_u))
    arr = np.asarray(u, dtype=float)
    if arr.shape == (sys.n_u,):
        return np.broadcast_to(arr, (n_steps, sys.n_u))
    if arr.shape == (n_steps, sys.n_u):
        return arr
    raise ValueError(f"controls must have shape ({sys.n_u},) or ({n_steps}, {sys.n_u})")


def integrate(sys: TimeFrozenSystem, y0, u=None, tau_f: float = 1.0, h: float = 1e-3,
              scheme: str = RK4) -> Trajectory:
    """Integrate over [0, tau_f] with N = ceil(tau_f / h) equal steps of length tau_f / N.

    ``u`` is None, a constant control vector, an (N, n_u) array of per-step
    controls, or a callable ``u(tau, y)`` evaluated at the start of each step.
    Mechanical systems with explicit schemes run in the compiled kernel.
    """
    scheme = normalize_scheme(scheme)
    if not (h > 0 and tau_f > 0):
        raise ValueError("h and tau_f must be positive")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (sys.n_y,):
        raise ValueError(f"y0 must have shape ({sys.n_y},)")
    n_steps = max(1, math.ceil(tau_f / h * (1.0 - 1e-12)))
    h_eff = tau_f / n_steps
    tau = np.linspace(0.0, tau_f, n_steps + 1)

    if callable(u):
        return _integrate_generic(sys, y0, u, n_steps, h_eff, scheme, tau)

    controls = _controls_per_step(sys, u, n_steps)
    acc = sys.base.accel
    if acc is not None and scheme != IMPLICIT_EULER and sys.n_c > 0:
        if controls is None:
            accel = np.broadcast_to(acc.drift, (n_steps, acc.drift.size))
        elif controls.strides[0] == 0:
            accel = np.broadcast_to(acc(controls[0]), (n_steps, acc.drift.size))
        else:
            accel = acc(controls)
        eps = sys.step_mode.eps if sys.step_mode.kind == "smoothed" else 0.0
        states = kernels.integrate_mechanical(
            np.ascontiguousarray(y0),
            np.ascontiguousarray([c.normal for c in sys.constraints]),
            np.array([c.offset for c in sys.constraints]),
            np.array([p.k for p in sys.aux_params]),
            np.array([p.c for p in sys.aux_params]),
            accel, h_eff, n_steps, 0 if scheme == EXPLICIT_EULER else 1, eps)
        return Trajectory(tau, states, scheme, h_eff, None if controls is None else np.asarray(controls))
    return _integrate_generic(sys, y0, controls, n_steps, h_eff, scheme, tau)


def _integrate_generic(sys, y0, u, n_steps, h, scheme, tau):
    states = np.empty((n_steps + 1, sys.n_y))
    states[0] = y0
    ctrl_log = None if (u is None and sys.n_u == 0) else np.zeros((n_steps, sys.n_u))
    y = y0.copy()
    for n in range(n_steps):
        if callable(u):
            un = np.asarray(u(tau[n], y), dtype=float)
        else:
            un = None if u is None else u[n]
        if ctrl_log is not None and un is not None:
            ctrl_log[n] = un
        if scheme == EXPLICIT_EULER:
            y = y + h * eval_rhs(sys, y, un)
        elif scheme == RK4:
            k1 = eval_rhs(sys, y, un)
            k2 = eval_rhs(sys, y + 0.5 * h * k1, un)
            k3 = eval_rhs(sys, y + 0.5 * h * k2, un)
            k4 = eval_rhs(sys, y + h * k3, un)
            y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            y = implicit_euler_step(sys, y, un, h, n)
        states[n + 1] = y
    return Trajectory(tau, states, scheme, h, ctrl_log)


def _smooth_jacobian(f, x, u, eps=1e-7):
    fx = np.asarray(f(x, u), dtype=float)
    J = np.empty((fx.size, x.size))
    for j in range(x.size):
        d = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += d
        xm[j] -= d
        J[:, j] = (np.asarray(f(xp, u)) - np.asarray(f(xm, u))) / (2 * d)
    return J


def _rhs_fixed(sys, y, u, alphas):
    """Combined field with the step values held fixed, and its Jacobian."""
    x = y[: sys.n_x]
    prod = float(np.prod(alphas)) if len(alphas) else 1.0
    F = np.empty(sys.n_y)
    F[: sys.n_x] = prod * np.asarray(sys.base.f(x, u), dtype=float)
    F[-1] = prod
    J = np.zeros((sys.n_y, sys.n_y))
    J[: sys.n_x, : sys.n_x] = prod * _smooth_jacobian(sys.base.f, x, u)
    for a, fld in zip(alphas, sys.fields):
        F[: sys.n_x] += (1.0 - a) * fld(x)
        J[: sys.n_x, : sys.n_x] += (1.0 - a) * fld.matrix
    return F, J


def _newton_sign(sys, y, u, h):
    z = y + h * eval_rhs(sys, y, u, SIGN)
    scale = max(1.0, float(np.abs(y).max()))

    def resid(zz):
        return zz - y - h * eval_rhs(sys, zz, u, SIGN)

    r = resid(z)
    for _ in range(NEWTON_MAXITER):
        nr = float(np.abs(r).max())
        if nr <= NEWTON_TOL * scale:
            return z
        alphas = step_values(sys.psi(z), SIGN)
        _, Jf = _rhs_fixed(sys, z, u, alphas)
        try:
            dz = np.linalg.solve(np.eye(sys.n_y) - h * Jf, -r)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while True:
            zt = z + t * dz
            rt = resid(zt)
            if float(np.abs(rt).max()) < (1.0 - 1e-4 * t) * nr or t < 1e-4:
                break
            t *= 0.5
        z, r = zt, rt
    return None


def _newton_modes(sys, y, u, h, modes):
    """Implicit Euler with a fixed activity pattern; boundary constraints carry alpha unknowns."""
    bnd = [i for i, md in enumerate(modes) if md == "boundary"]
    alphas = np.array([1.0 if md == "free" else 0.0 if md == "aux" else 0.5 for md in modes])
    z = y.copy()
    nb = len(bnd)
    scale = max(1.0, float(np.abs(y).max()))
    for _ in range(NEWTON_MAXITER):
        F, J = _rhs_fixed(sys, z, u, alphas)
        r = np.concatenate([z - y - h * F, sys.psi(z)[bnd]])
        if float(np.abs(r).max()) <= NEWTON_TOL * scale:
            return z, alphas
        # derivative of F with respect to each boundary alpha
        G = np.zeros((sys.n_y, nb))
        fx = np.append(np.asarray(sys.base.f(z[: sys.n_x], u), dtype=float), 1.0)
        for col, i in enumerate(bnd):
            others = np.prod(np.delete(alphas, i)) if len(alphas) > 1 else 1.0
            G[:, col] = others * fx
            G[: sys.n_x, col] -= sys.fields[i](z[: sys.n_x])
        K = np.zeros((sys.n_y + nb, sys.n_y + nb))
        K[: sys.n_y, : sys.n_y] = np.eye(sys.n_y) - h * J
        K[: sys.n_y, sys.n_y:] = -h * G
        for row, i in enumerate(bnd):
            K[sys.n_y + row, : sys.n_x] = sys.fields[i].psi_row
        try:
            d = np.linalg.solve(K, -r)
        except np.linalg.LinAlgError:
            return None
        z = z + d[: sys.n_y]
        alphas[bnd] += d[sys.n_y:]
    return None


def implicit_euler_step(sys: TimeFrozenSystem, y, u, h: float, index: int = 0) -> np.ndarray:
    """Solve z = y + h F(z, u) with the sign step function.

    Damped Newton treats the step values as locally constant. If it stalls
    at a switching surface, each activity pattern (free, restitution,
    on-boundary with alpha in [0, 1]) is tried and the first consistent
    solution is taken.
    """
    z = _newton_sign(sys, y, u, h)
    if z is not None:
        return z
    tol = 1e-9 * max(1.0, float(np.abs(y).max()))
    for modes in itertools.product(("free", "aux", "boundary"), repeat=sys.n_c):
        res = _newton_modes(sys, y, u, h, modes)
        if res is None:
            continue
        z, alphas = res
        psi = sys.psi(z)
        ok = all(
            (md == "free" and psi[i] >= -tol)
            or (md == "aux" and psi[i] <= tol)
            or (md == "boundary" and -1e-12 <= alphas[i] <= 1 + 1e-12)
            for i, md in enumerate(modes))
        if ok:
            return z
    raise IntegrationError(f"implicit Euler Newton did not converge in {NEWTON_MAXITER} iterations",
                           index)


def recover_physical(traj: Trajectory, theta: float = FROZEN_THRESHOLD) -> PhysicalTrajectory:
    """Drop samples whose incoming step advanced the clock by less than theta * h.

    The first sample is kept when the first step is not frozen. At a jump
    the pre-jump and post-jump samples share (almost) the same physical time
    and are both kept, in order.
    """
    clock = traj.clock
    inc = np.diff(clock)
    running = inc >= theta * traj.h
    keep = np.empty(len(clock), dtype=bool)
    keep[1:] = running
    keep[0] = running[0] if running.size else True
    return PhysicalTrajectory(
        t_grid=clock[keep].copy(),
        states=traj.states[keep, :-1].copy(),
        frozen_mask=~keep,
        tau_grid=traj.tau_grid[keep].copy(),
    )


@dataclass(eq=False)
class Jump:
    """One restitution phase seen in a sampled trajectory."""

    t: float
    constraints: tuple
    pre_index: int
    post_index: Optional[int]
    pre_state: np.ndarray
    post_state: Optional[np.ndarray]

    @property
    def complete(self) -> bool:
        return self.post_index is not None


def detect_jumps(traj: Trajectory, sys: TimeFrozenSystem,
                 theta: float = FROZEN_THRESHOLD) -> list:
    """Maximal runs of frozen steps, with the constraints violated during each run."""
    inc = np.diff(traj.clock)
    frozen = inc < theta * traj.h
    jumps = []
    n = 0
    while n < frozen.size:
        if not frozen[n]:
            n += 1
            continue
        start = n
        while n < frozen.size and frozen[n]:
            n += 1
        pre = start
        post = n + 1 if n < frozen.size else None
        inside = traj.states[start + 1: n + 1]
        psi = sys.psi(inside) if len(inside) else np.zeros((0, sys.n_c))
        active = tuple(int(i) for i in np.flatnonzero((psi < 0).any(axis=0))) if len(psi) else ()
        jumps.append(Jump(
            t=float(traj.clock[pre]),
            constraints=active,
            pre_index=pre,
            post_index=post,
            pre_state=traj.states[pre, :-1].copy(),
            post_state=None if post is None else traj.states[post, :-1].copy(),
        ))
    return jumps


def terminal_state(phys: PhysicalTrajectory, t_f: float) -> np.ndarray:
    """State at the largest retained t <= t_f, linearly interpolated towards t_f."""
    t = phys.t_grid
    idx = np.flatnonzero(t <= t_f)
    if idx.size == 0:
        raise ValueError(f"no retained sample at or before t = {t_f}")
    i = int(idx[-1])
    if i + 1 < len(t) and t[i + 1] > t[i]:
        w = (t_f - t[i]) / (t[i + 1] - t[i])
        return (1.0 - w) * phys.states[i] + w * phys.states[i + 1]
    return phys.states[i].copy()


def analytic_bouncing_ball(q0: float, v0: float, gamma: float, g: float, t: float,
                           max_impacts: int = 10_000) -> tuple:
    """Exact (q, v) of the bouncing ball at time t (left limit at impact instants)."""
    if q0 < 0:
        raise ValueError("initial height must be nonnegative")
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    if t < 0:
        raise ValueError("t must be nonnegative")
    q, v, now = float(q0), float(v0), 0.0
    for _ in range(max_impacts + 1):
        s = (v + math.sqrt(v * v + 2.0 * g * q)) / g  # time to the next contact
        if now + s >= t:
            ds = t - now
            return q + v * ds - 0.5 * g * ds * ds, v - g * ds
        now += s
        v = -gamma * (v - g * s)
        q = 0.0
    raise ZenoError(f"more than {max_impacts} impacts before t = {t}")


def required_pseudo_time(t_f: float, n_jumps: int, tau_jump: float) -> float:
    if t_f < 0 or n_jumps < 0 or tau_jump < 0:
        raise ValueError("inputs must be nonnegative")
    return t_f + n_jumps * tau_jump


def fit_order(Ms, Es) -> float:
    """Least-squares slope p in E ~ M^-p."""
    Ms = np.asarray(Ms, dtype=float)
    Es = np.asarray(Es, dtype=float)
    ok = Es > 0
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(np.log(Ms[ok]), np.log(Es[ok]), 1)[0]
    return float(-slope)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # (scheme, M, h, E)
    orders: dict = field(default_factory=dict)

    def errors(self, scheme: str) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == scheme])

    def budgets(self, scheme: str) -> np.ndarray:
        return np.array([r[1] for r in self.rows if r[0] == scheme])

    def inversions(self, scheme: str) -> int:
        """Number of consecutive M pairs where the error did not decrease."""
        E = self.errors(scheme)
        return int(np.sum(np.diff(E) >= 0))


def _threads() -> int:
    env = os.environ.get("TIMEFREEZE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def convergence_study(sys: TimeFrozenSystem, y0, oracle: Callable[[float], np.ndarray],
                      tau_f: float, t_f: float, schemes: Sequence[str], Ms: Sequence[int],
                      u=None, threads: Optional[int] = None) -> ConvergenceTable:
    """Terminal error E = ||x_exact(t_f) - recovered x(t_f)|| over function-evaluation budgets M."""
    schemes = [normalize_scheme(s) for s in schemes]
    cells = []
    for s in schemes:
        per = EVALS_PER_STEP[s]
        for M in Ms:
            if M % per:
                raise ValueError(f"M = {M} is not a multiple of {per} evaluations per {s} step")
            cells.append((s, int(M)))
    x_exact = np.asarray(oracle(t_f), dtype=float)

    def run(cell):
        s, M = cell
        N = M // EVALS_PER_STEP[s]
        traj = integrate(sys, y0, u, tau_f, tau_f / N, s)
        x_num = terminal_state(recover_physical(traj), t_f)
        return (s, M, traj.h, float(np.linalg.norm(x_exact - x_num)))

    workers = threads or _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]
    table = ConvergenceTable(rows=rows)
    for s in schemes:
        table.orders[s] = fit_order(table.budgets(s), table.errors(s))
    return table
