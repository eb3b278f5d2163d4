"""System types and the time-frozen reformulation of ODEs with state jumps.

A :class:`StateJumpSystem` is a smooth vector field restricted by affine
unilateral constraints, with Newton's restitution law applied on impact. The
time-frozen form replaces each jump by a spring-damper flow that runs inside
the prohibited region while an appended clock state stands still.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

__all__ = [
    "AffineConstraint",
    "Assumption1Error",
    "Assumption1Report",
    "AuxiliaryField",
    "AuxiliaryParams",
    "DomainError",
    "LinearAcceleration",
    "NonOrthogonalConstraintsError",
    "StateJumpSystem",
    "StepMode",
    "StepValue",
    "TimeFrozenSystem",
    "assemble_time_frozen",
    "bouncing_ball",
    "build_auxiliary",
    "compute_damping",
    "compute_tau_jump",
    "eval_rhs",
    "lp_kkt_residual",
    "mechanical_system",
    "particle_3d",
    "step",
    "step_set",
    "step_values",
    "verify_assumption1",
    "GRAVITY",
]

GRAVITY = 9.81
ORTHOGONALITY_TOL = 1e-10


class DomainError(ValueError):
    """Parameter outside its admissible range."""


class NonOrthogonalConstraintsError(ValueError):
    pass


class Assumption1Error(RuntimeError):
    """The auxiliary flow did not return to the switching surface in time."""


def _check_params(k: float, gamma: float) -> None:
    if not (k > 0 and math.isfinite(k)):
        raise DomainError(f"stiffness k must be positive and finite, got {k}")
    if not (0.0 < gamma <= 1.0):
        raise DomainError(f"restitution coefficient gamma must lie in (0, 1], got {gamma}")


def compute_damping(k: float, gamma: float) -> float:
    """Damping c that makes the unit spring-damper return with speed ratio ``gamma``.

    c = 2 |ln gamma| sqrt(k / (ln(gamma)^2 + pi^2)); zero for a perfectly
    elastic impact.
    """
    _check_params(k, gamma)
    lg = math.log(gamma)
    return 2.0 * abs(lg) * math.sqrt(k / (lg * lg + math.pi**2))


def compute_tau_jump(k: float, gamma: float) -> float:
    """Pseudo-time spent in one restitution phase."""
    _check_params(k, gamma)
    lg = math.log(gamma)
    return math.sqrt((math.pi**2 + lg * lg) / k)


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """psi(q) = normal . q + offset >= 0, stored with a unit normal.

    Both normal and offset are divided by the norm of the given normal, so the
    feasible set is unchanged by normalization.
    """

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).ravel()
        norm = float(np.linalg.norm(n))
        if n.size == 0 or not math.isfinite(norm) or norm == 0.0:
            raise ValueError("constraint normal must be a finite nonzero vector")
        n /= norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @property
    def dim(self) -> int:
        return self.normal.size

    def __call__(self, q):
        """Constraint value; ``q`` may carry leading batch axes."""
        return np.asarray(q, dtype=float) @ self.normal + self.offset


@dataclass(frozen=True)
class AuxiliaryParams:
    """Spring-damper parameters for one constraint's restitution phase."""

    k: float
    c: float
    gamma: float
    tau_jump: float

    def __post_init__(self):
        _check_params(self.k, self.gamma)
        if self.c < 0:
            raise DomainError("damping must be nonnegative")
        if self.c * self.c - 4.0 * self.k >= 0:
            raise DomainError("auxiliary dynamics must be underdamped (c^2 < 4k)")
        if (self.c == 0.0) != (self.gamma == 1.0):
            raise DomainError("c = 0 exactly when gamma = 1")
        if not math.isclose(self.tau_jump, compute_tau_jump(self.k, self.gamma), rel_tol=1e-12):
            raise DomainError("tau_jump inconsistent with (k, gamma)")

    @classmethod
    def from_stiffness(cls, k: float, gamma: float) -> "AuxiliaryParams":
        return cls(k=float(k), c=compute_damping(k, gamma), gamma=float(gamma),
                   tau_jump=compute_tau_jump(k, gamma))


@dataclass(frozen=True, eq=False)
class LinearAcceleration:
    """Free-flight acceleration ``drift + input_matrix @ u``."""

    drift: np.ndarray
    input_matrix: np.ndarray

    def __post_init__(self):
        d = np.array(self.drift, dtype=float).ravel()
        B = np.array(self.input_matrix, dtype=float).reshape(d.size, -1)
        d.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "drift", d)
        object.__setattr__(self, "input_matrix", B)

    @property
    def n_u(self) -> int:
        return self.input_matrix.shape[1]

    def __call__(self, u=None):
        if self.n_u == 0 or u is None:
            return self.drift.copy()
        return self.drift + np.asarray(u, dtype=float) @ self.input_matrix.T


@dataclass(frozen=True, eq=False)
class StateJumpSystem:
    """x' = f(x, u) in the feasible region, v+ = -gamma v- along the normal on impact.

    ``accel`` is set for mechanical systems whose free flight is
    (q' = v, v' = drift + B u); it enables the compiled integration path and
    the OCP transcription.
    """

    n_x: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    constraints: tuple
    gamma: float
    n_u: int = 0
    accel: Optional[LinearAcceleration] = None
    name: str = "custom"

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise DomainError(f"restitution coefficient gamma must lie in (0, 1], got {self.gamma}")
        cons = tuple(self.constraints)
        if cons and self.n_x % 2:
            raise ValueError("mechanical systems stack positions over velocities; n_x must be even")
        for con in cons:
            if con.dim != self.n_x // 2:
                raise ValueError(
                    f"constraint normal has length {con.dim}, expected {self.n_x // 2}")
        object.__setattr__(self, "constraints", cons)

    @property
    def n_q(self) -> int:
        return self.n_x // 2

    @property
    def n_c(self) -> int:
        return len(self.constraints)

    def psi(self, x) -> np.ndarray:
        """All constraint values at state(s) ``x``; shape (..., n_c)."""
        x = np.asarray(x, dtype=float)
        if not self.constraints:
            return np.zeros(x.shape[:-1] + (0,))
        q = x[..., : self.n_q]
        return np.stack([con(q) for con in self.constraints], axis=-1)


def mechanical_system(drift, constraints, gamma, input_matrix=None, name="mechanical"):
    """Point mass with constant drift acceleration, optional linear input, affine walls."""
    drift = np.asarray(drift, dtype=float).ravel()
    m = drift.size
    B = np.zeros((m, 0)) if input_matrix is None else np.asarray(input_matrix, dtype=float)
    acc = LinearAcceleration(drift, B)

    def f(x, u=None):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[m:], acc(u)])

    return StateJumpSystem(n_x=2 * m, f=f, constraints=tuple(constraints), gamma=gamma,
                           n_u=acc.n_u, accel=acc, name=name)


def bouncing_ball(gamma=0.9, g=GRAVITY, mass=1.0):
    """Ball on a table: q'' = -g, q >= 0."""
    del mass  # gravity acts independently of mass
    return mechanical_system([-g], [AffineConstraint([1.0], 0.0)], gamma, name="bouncing-ball")


def particle_3d(gamma=0.9, g=GRAVITY, mass=1.0):
    """Force-controlled particle in the positive octant under gravity along -z."""
    cons = [AffineConstraint(e, 0.0) for e in np.eye(3)]
    return mechanical_system([0.0, 0.0, -g], cons, gamma, input_matrix=np.eye(3) / mass,
                             name="particle-3d")


@dataclass(frozen=True, eq=False)
class AuxiliaryField:
    """Affine restitution flow phi(x) = matrix @ x + shift for one constraint.

    Acts only on the projected coordinates (eta, nu) = (psi(q), n . v), where
    it is the spring-damper (nu, -k eta - c nu).
    """

    matrix: np.ndarray
    shift: np.ndarray
    constraint: AffineConstraint
    params: AuxiliaryParams

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.shift

    @property
    def psi_row(self) -> np.ndarray:
        """Coefficients g with psi(x) = g . x + offset, over the full state."""
        return np.concatenate([self.constraint.normal, np.zeros(self.constraint.dim)])


def build_auxiliary(constraint: AffineConstraint, params: AuxiliaryParams, n_x: int) -> AuxiliaryField:
    m = constraint.dim
    if n_x != 2 * m:
        raise ValueError(f"state dimension {n_x} does not match constraint dimension {m}")
    N = np.zeros((n_x, 2))
    N[:m, 0] = constraint.normal
    N[m:, 1] = constraint.normal
    K = np.array([[0.0, 1.0], [-params.k, -params.c]])
    A = N @ K @ N.T
    shift = N @ K @ np.array([constraint.offset, 0.0])
    A.setflags(write=False)
    shift.setflags(write=False)
    return AuxiliaryField(A, shift, constraint, params)


@dataclass(frozen=True)
class StepMode:
    """How the step function alpha(z) is evaluated.

    ``sign`` uses (1 + sign z) / 2, ``midpoint`` picks the midpoint of the
    set-valued step, ``smoothed`` the logistic 1 / (1 + exp(-z / eps)) and
    ``lp-kkt`` solves the parametric LP and also returns its multipliers.
    """

    kind: str = "sign"
    eps: Optional[float] = None

    KINDS = ("sign", "midpoint", "smoothed", "lp-kkt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown step mode {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "smoothed":
            if self.eps is None or not self.eps > 0:
                raise ValueError("smoothed step mode requires eps > 0")

    @classmethod
    def parse(cls, text: str, eps: Optional[float] = None) -> "StepMode":
        return cls(text.strip().lower(), eps)


SIGN = StepMode("sign")
MIDPOINT = StepMode("midpoint")
LP_KKT = StepMode("lp-kkt")


@dataclass(frozen=True)
class StepValue:
    value: float
    multipliers: Optional[tuple] = None  # (lambda0, lambda1) in lp-kkt mode


def step_set(z: float) -> tuple:
    """The set-valued step alpha(z) as an interval (lo, hi)."""
    if z > 0:
        return (1.0, 1.0)
    if z < 0:
        return (0.0, 0.0)
    return (0.0, 1.0)


def step(z: float, mode: StepMode = SIGN) -> StepValue:
    z = float(z)
    if mode.kind == "smoothed":
        return StepValue(0.5 * (1.0 + math.tanh(0.5 * z / mode.eps)))
    lo, hi = step_set(z)
    alpha = 0.5 * (lo + hi)
    if mode.kind == "lp-kkt":
        return StepValue(alpha, (max(-z, 0.0), max(z, 0.0)))
    return StepValue(alpha)


def step_values(z, mode: StepMode = SIGN) -> np.ndarray:
    """Vectorized ``step(z).value``."""
    z = np.asarray(z, dtype=float)
    if mode.kind == "smoothed":
        return 0.5 * (1.0 + np.tanh(0.5 * z / mode.eps))
    return 0.5 * (1.0 + np.sign(z))


def lp_kkt_residual(z, alpha, lam0, lam1) -> np.ndarray:
    """KKT residual of argmin_w -z w s.t. 0 <= w <= 1 at (alpha, lam0, lam1).

    Entries: stationarity z - (lam1 - lam0); violations of lam0, lam1, alpha,
    1 - alpha >= 0; products alpha * lam0 and (1 - alpha) * lam1.
    """
    return np.array([
        z - (lam1 - lam0),
        max(-lam0, 0.0),
        max(-lam1, 0.0),
        max(-alpha, 0.0),
        max(alpha - 1.0, 0.0),
        alpha * lam0,
        (1.0 - alpha) * lam1,
    ])


@dataclass(frozen=True, eq=False)
class TimeFrozenSystem:
    """Augmented system on y = (x, t) with Filippov-combined fields.

    y' = prod_i alpha(psi_i) (f, 1) + sum_i (1 - alpha(psi_i)) (phi_i, 0)
    """

    base: StateJumpSystem
    aux_params: tuple
    fields: tuple
    step_mode: StepMode = SIGN

    @property
    def n_x(self) -> int:
        return self.base.n_x

    @property
    def n_y(self) -> int:
        return self.base.n_x + 1

    @property
    def n_u(self) -> int:
        return self.base.n_u

    @property
    def n_c(self) -> int:
        return self.base.n_c

    @property
    def constraints(self) -> tuple:
        return self.base.constraints

    def psi(self, y) -> np.ndarray:
        return self.base.psi(np.asarray(y, dtype=float)[..., : self.n_x])

    def rhs(self, y, u=None, mode: Optional[StepMode] = None) -> np.ndarray:
        return eval_rhs(self, y, u, mode)

    def with_step_mode(self, mode: StepMode) -> "TimeFrozenSystem":
        return TimeFrozenSystem(self.base, self.aux_params, self.fields, mode)


def assemble_time_frozen(sys: StateJumpSystem, k, step_mode: StepMode = SIGN) -> TimeFrozenSystem:
    """Time-frozen system with one spring-damper per constraint.

    ``k`` is a shared stiffness or one value per constraint. More than one
    constraint is only accepted for pairwise orthogonal normals, where the
    corner field is the plain sum of the neighbouring auxiliary fields.
    """
    ks = np.broadcast_to(np.asarray(k, dtype=float), (sys.n_c,))
    if sys.n_c == 0:
        return TimeFrozenSystem(sys, (), (), step_mode)
    normals = np.array([con.normal for con in sys.constraints])
    gram = normals @ normals.T
    off = gram - np.diag(np.diag(gram))
    if np.any(np.abs(off) > ORTHOGONALITY_TOL):
        i, j = np.argwhere(np.abs(off) > ORTHOGONALITY_TOL)[0]
        raise NonOrthogonalConstraintsError(
            f"constraints {i} and {j} are not orthogonal (n_i . n_j = {off[i, j]:.3g})")
    params = tuple(AuxiliaryParams.from_stiffness(float(kk), sys.gamma) for kk in ks)
    fields = tuple(build_auxiliary(con, p, sys.n_x) for con, p in zip(sys.constraints, params))
    return TimeFrozenSystem(sys, params, fields, step_mode)


def eval_rhs(sys: TimeFrozenSystem, y, u=None, mode: Optional[StepMode] = None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (sys.n_y,):
        raise ValueError(f"augmented state must have shape ({sys.n_y},), got {y.shape}")
    mode = mode or sys.step_mode
    x = y[: sys.n_x]
    alphas = step_values(sys.psi(y), mode)
    prod = float(np.prod(alphas))
    if sys.n_u:
        u = np.zeros(sys.n_u) if u is None else np.asarray(u, dtype=float)
    out = np.empty(sys.n_y)
    out[: sys.n_x] = prod * sys.base.f(x, u)
    out[-1] = prod
    for a, fld in zip(alphas, sys.fields):
        if a != 1.0:
            out[: sys.n_x] += (1.0 - a) * fld(x)
    return out


@dataclass(frozen=True, eq=False)
class Assumption1Report:
    tau_return: float
    x_return: np.ndarray
    restitution_ratio: float
    stayed_in_Vminus: bool
    tau_jump: float

    @property
    def returned_to_Splus(self) -> bool:
        return self.restitution_ratio > 0


def verify_assumption1(aux: AuxiliaryField, x0, fine_dt: float = 1e-6) -> Assumption1Report:
    """Integrate the auxiliary flow from an impact state and measure its first return.

    Uses classical RK4 at step ``fine_dt``; the crossing inside the final step
    is located by bisection. Fails if no return happens within ten nominal
    restitution phases.
    """
    x0 = np.asarray(x0, dtype=float)
    con = aux.constraint
    m = con.dim
    if x0.shape != (2 * m,):
        raise ValueError(f"x0 must have shape ({2 * m},)")
    eta0 = float(con(x0[:m]))
    nu0 = float(con.normal @ x0[m:])
    if abs(eta0) > 1e-12 * max(1.0, float(np.abs(x0[:m]).max())):
        raise ValueError(f"x0 is not on the switching surface (psi = {eta0:.3g})")
    if not nu0 < 0:
        raise ValueError("x0 must approach the constraint (n . v < 0)")
    if not fine_dt > 0:
        raise ValueError("fine_dt must be positive")
    tau_nominal = aux.params.tau_jump
    max_steps = int(math.ceil(10.0 * tau_nominal / fine_dt))
    res = kernels.linear_first_return(
        np.ascontiguousarray(aux.matrix), np.ascontiguousarray(aux.shift),
        np.ascontiguousarray(x0), np.ascontiguousarray(aux.psi_row),
        con.offset, float(fine_dt), max_steps)
    if res is None:
        raise Assumption1Error(
            f"no return to the switching surface within {10 * tau_nominal:.4g} pseudo-time")
    tau, x_ret, negative = res
    ratio = -float(con.normal @ x_ret[m:]) / nu0
    return Assumption1Report(float(tau), np.asarray(x_ret), ratio, bool(negative), tau_nominal)
