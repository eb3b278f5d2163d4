"""Time-optimal control of time-frozen systems by penalized complementarity.

The step functions of the time-frozen field are replaced by the optimality
conditions of their parametric LP, psi = lambda1 - lambda0 with
0 <= alpha _|_ lambda0 >= 0 and 0 <= 1 - alpha _|_ lambda1 >= 0. The OCP on
s in [0, 1] with speed of time w (tau = w s) is discretized by the implicit
Euler scheme, fully implicit in the states and in alpha. Each complementarity
pair is moved into the objective as mu * a * b, and a short sequence of
smooth NLPs with growing mu is solved, each warm started from the previous
one.

Variable layout (all blocks flattened row-major and concatenated):

    Y    (N + 1, n_x + 1)   states with the clock in the last column
    ALG  (N + 1, n_c, 3)    (alpha, lambda0, lambda1) per node and constraint
    U    (N_ctrl, n_u)      piecewise constant controls
    w    scalar             speed of time
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import GRAVITY, TimeFrozenSystem, assemble_time_frozen, particle_3d
from .nlp import Block, IpmOptions, KktPoint, NlpSolverError, SmoothNlp, get_solver
from .nlp.ad import concatenate
from .simulate import FROZEN_THRESHOLD, PhysicalTrajectory, Trajectory, recover_physical

__all__ = [
    "HomotopyError",
    "HomotopyResult",
    "HomotopySchedule",
    "OcpDefinition",
    "OcpSolution",
    "TranscribedNlp",
    "complementarity_residual",
    "extract_solution",
    "initial_guess",
    "objective_terms",
    "particle_ocp",
    "STATE_GUESSES",
    "penalize",
    "solve_homotopy",
    "transcribe",
]


@dataclass(frozen=True, eq=False)
class OcpDefinition:
    """min t(1) + rho |q(1) - q_target|^2 over u and w, s in [0, 1]."""

    sys: TimeFrozenSystem
    y0: np.ndarray
    q_target: Optional[np.ndarray] = None
    rho: float = 100.0
    u_lower: Optional[np.ndarray] = None
    u_upper: Optional[np.ndarray] = None
    w_max: float = 20.0
    N: int = 50
    N_ctrl: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.sys, TimeFrozenSystem):
            raise TypeError("OCP systems must be assembled with assemble_time_frozen")
        y0 = np.asarray(self.y0, dtype=float).ravel()
        if y0.shape != (self.sys.n_y,):
            raise ValueError(f"y0 must have length n_x + 1 = {self.sys.n_y}")
        object.__setattr__(self, "y0", y0)
        if self.q_target is not None:
            q = np.asarray(self.q_target, dtype=float).ravel()
            if q.size > self.sys.n_x:
                raise ValueError("target has more entries than the state")
            object.__setattr__(self, "q_target", q)
        if self.N < 1:
            raise ValueError("N must be positive")
        n_ctrl = self.N if self.N_ctrl is None else int(self.N_ctrl)
        if n_ctrl < 1 or self.N % n_ctrl:
            raise ValueError(f"N_ctrl = {n_ctrl} must divide N = {self.N}")
        object.__setattr__(self, "N_ctrl", n_ctrl)
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not (np.isfinite(self.w_max) and self.w_max > 1.0):
            raise ValueError("w_max must be finite and greater than 1")
        nu = self.sys.n_u
        for name in ("u_lower", "u_upper"):
            val = getattr(self, name)
            if nu and val is None:
                raise ValueError(f"{name} is required for systems with inputs")
            if val is not None:
                arr = np.broadcast_to(np.asarray(val, dtype=float), (nu,)).copy()
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name} must be finite")
                object.__setattr__(self, name, arr)
        if nu and np.any(self.u_lower >= self.u_upper):
            raise ValueError("u_lower must be strictly below u_upper")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def w_bounds(self) -> tuple:
        return (1.0 / self.w_max, self.w_max)


@dataclass(frozen=True)
class HomotopySchedule:
    mu0: float = 1e-3
    factor: float = 10.0
    count: int = 7

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        if not self.factor > 1:
            raise ValueError("factor must exceed 1")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("count must be a positive integer")

    def values(self) -> np.ndarray:
        return self.mu0 * self.factor ** np.arange(self.count)


def particle_ocp(N: int = 50, N_ctrl: Optional[int] = None, gamma: float = 0.9, k: float = 100.0,
                 mass: float = 1.0, g: float = GRAVITY, rho: float = 100.0, w_max: float = 20.0,
                 q0=(4.0, 4.0, 1.0), v0=(-3.0, -3.5, 0.0), q_target=(5.0, 5.0, 1.0)) -> OcpDefinition:
    """Time-optimal transfer of the force-controlled particle, |u_i| <= m g."""
    sys = assemble_time_frozen(particle_3d(gamma, g, mass), k)
    y0 = np.concatenate([q0, v0, [0.0]])
    bound = mass * g * np.ones(3)
    return OcpDefinition(sys, y0, np.asarray(q_target, dtype=float), rho, -bound, bound, w_max, N, N_ctrl)


# --------------------------------------------------------------------------- layout
class TranscribedNlp:
    """Implicit-Euler transcription with LP-KKT algebraic variables (no penalty yet)."""

    def __init__(self, ocp: OcpDefinition):
        self.ocp = ocp
        sys = ocp.sys
        self.N, self.N_ctrl = ocp.N, ocp.N_ctrl
        self.n_y, self.n_x, self.n_c, self.n_u = sys.n_y, sys.n_x, sys.n_c, sys.n_u
        self.h = ocp.h
        N1 = self.N + 1
        self.off_y = 0
        self.off_alg = N1 * self.n_y
        self.off_u = self.off_alg + N1 * self.n_c * 3
        self.idx_w = self.off_u + self.N_ctrl * self.n_u
        self.n = self.idx_w + 1
        self.Y = np.arange(self.off_y, self.off_alg).reshape(N1, self.n_y)
        self.ALG = np.arange(self.off_alg, self.off_u).reshape(N1, self.n_c, 3)
        self.U = np.arange(self.off_u, self.idx_w).reshape(self.N_ctrl, self.n_u)
        # complementarity pairs: (alpha, lambda0) and (1 - alpha, lambda1)
        self.alpha_idx = self.ALG[:, :, 0].ravel()
        self.lam0_idx = self.ALG[:, :, 1].ravel()
        self.lam1_idx = self.ALG[:, :, 2].ravel()
        self.lower, self.upper = self._bounds()
        self.objective_blocks = (self._terminal_block(),)
        self.constraint_blocks = self._constraint_blocks()
        self.m = sum(b.n_rows for b in self.constraint_blocks)

    @property
    def n_pairs(self) -> int:
        return 2 * self.alpha_idx.size

    def control_index(self, n: int) -> int:
        return n * self.N_ctrl // self.N

    def _bounds(self):
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        lo[self.alpha_idx] = 0.0
        hi[self.alpha_idx] = 1.0
        lo[self.lam0_idx] = 0.0
        lo[self.lam1_idx] = 0.0
        if self.n_u:
            lo[self.U] = self.ocp.u_lower
            hi[self.U] = self.ocp.u_upper
        lo[self.idx_w], hi[self.idx_w] = self.ocp.w_bounds
        return lo, hi

    def _terminal_block(self) -> Block:
        ocp = self.ocp
        target = ocp.q_target
        nq = 0 if target is None else target.size
        index = np.concatenate([[self.Y[-1, -1]], self.Y[-1, :nq]])[None, :]
        rho = ocp.rho

        def fun(d):
            t = d[:, 0]
            if nq == 0:
                return t
            e = d[:, 1:] - target
            return t + rho * (e * e).sum(axis=1)

        return Block(index, fun, 1, "terminal")

    def _constraint_blocks(self) -> tuple:
        sys = self.ocp.sys
        n_y, n_x, n_c, n_u = self.n_y, self.n_x, self.n_c, self.n_u
        y0 = self.ocp.y0
        blocks = [Block(self.Y[0][None, :], lambda d: d - y0, n_y, "initial")]

        # defects y_{n+1} - y_n - h w F(y_{n+1}, u, alpha_{n+1}) = 0
        ctrl = np.array([self.control_index(n) for n in range(self.N)], dtype=np.intp)
        parts = [self.Y[:-1], self.Y[1:], self.ALG[1:, :, 0]]
        if n_u:
            parts.append(self.U[ctrl])
        parts.append(np.full((self.N, 1), self.idx_w))
        index = np.concatenate(parts, axis=1)
        field = _frozen_field(sys)
        h = self.h
        s_a = slice(2 * n_y, 2 * n_y + n_c)
        s_u = slice(s_a.stop, s_a.stop + n_u)
        iw = s_u.stop

        def defect(d):
            y_prev = d[:, :n_y]
            y_next = d[:, n_y:2 * n_y]
            alpha = d[:, s_a]
            u = d[:, s_u] if n_u else None
            w = d[:, iw:iw + 1]
            return y_next - y_prev - h * (w * field(y_next[:, :n_x], alpha, u))

        blocks.append(Block(index, defect, n_y, "defects"))

        # LP stationarity psi_i(q_n) = lambda1 - lambda0 at every node
        m = n_x // 2
        for i, con in enumerate(sys.constraints):
            idx = np.concatenate([self.Y[:, :m], self.ALG[:, i, 1:3]], axis=1)
            normal, offset = con.normal.copy(), float(con.offset)

            def stationarity(d, normal=normal, offset=offset):
                psi = d[:, :m] @ normal + offset
                return (psi - (d[:, m + 1] - d[:, m])).reshape(-1, 1)

            blocks.append(Block(idx, stationarity, 1, f"stationarity[{i}]"))
        return tuple(blocks)

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        return {"Y": x[self.Y], "ALG": x[self.ALG], "U": x[self.U], "w": float(x[self.idx_w])}

    def metadata(self) -> dict:
        return {
            "N": self.N, "N_ctrl": self.N_ctrl, "n_y": self.n_y, "n_c": self.n_c, "n_u": self.n_u,
            "n_variables": self.n, "n_equalities": self.m, "h": self.h,
            "layout": [
                {"block": "Y", "offset": self.off_y, "shape": [self.N + 1, self.n_y]},
                {"block": "ALG", "offset": self.off_alg, "shape": [self.N + 1, self.n_c, 3],
                 "columns": ["alpha", "lambda0", "lambda1"]},
                {"block": "U", "offset": self.off_u, "shape": [self.N_ctrl, self.n_u]},
                {"block": "w", "offset": self.idx_w, "shape": []},
            ],
        }

    def smooth(self, mu: float = 0.0) -> SmoothNlp:
        return penalize(self, mu) if self.n_c else SmoothNlp(
            self.n, self.objective_blocks, self.constraint_blocks, self.lower, self.upper, "ocp")


def _frozen_field(sys: TimeFrozenSystem) -> Callable:
    """Batched F(x, alpha, u) of the time-frozen field with alpha as variables.

    Works on plain arrays and on dual arrays; the free-flight part comes from
    the mechanical (drift, input matrix) description when available and from
    ``sys.base.f`` otherwise, which must then accept batched dual input.
    """
    base = sys.base
    n_x, n_c = sys.n_x, sys.n_c
    acc = base.accel
    mats = [(fld.matrix.T.copy(), fld.shift.copy()) for fld in sys.fields]

    def free(x, u):
        if acc is None:
            return base.f(x, u)
        m = n_x // 2
        drift = np.broadcast_to(acc.drift, (x.shape[0], m))
        a = drift if acc.n_u == 0 else u @ acc.input_matrix.T + drift
        return concatenate([x[:, m:], a], axis=1)

    def F(x, alpha, u):
        prod = None
        for i in range(n_c):
            prod = alpha[:, i:i + 1] if prod is None else prod * alpha[:, i:i + 1]
        fx = free(x, u)
        if prod is None:
            return concatenate([fx, np.ones((x.shape[0], 1))], axis=1)
        out = prod * fx
        for i, (AT, shift) in enumerate(mats):
            out = out + (1.0 - alpha[:, i:i + 1]) * (x @ AT + shift)
        return concatenate([out, prod], axis=1)

    return F


def transcribe(ocp: OcpDefinition) -> TranscribedNlp:
    sys = ocp.sys
    if not isinstance(sys, TimeFrozenSystem) or len(sys.fields) != sys.n_c:
        raise TypeError("constraints must be assembled with assemble_time_frozen")
    return TranscribedNlp(ocp)


def penalize(nlp: TranscribedNlp, mu: float) -> SmoothNlp:
    """Smooth NLP with mu * sum(alpha lambda0 + (1 - alpha) lambda1) added to the objective."""
    if not mu > 0:
        raise ValueError("penalty parameter mu must be positive")
    blocks = list(nlp.objective_blocks)
    if nlp.n_c:
        index = nlp.ALG.reshape(-1, 3)

        def penalty(d):
            a, l0, l1 = d[:, 0], d[:, 1], d[:, 2]
            return mu * (a * l0 + (1.0 - a) * l1)

        blocks.append(Block(index, penalty, 1, "complementarity"))
    return SmoothNlp(nlp.n, blocks, nlp.constraint_blocks, nlp.lower, nlp.upper, f"ocp(mu={mu:g})")


def objective_terms(nlp: TranscribedNlp, x, mu: float = 0.0) -> dict:
    """Independent evaluation of the objective parts at ``x``."""
    parts = nlp.unpack(x)
    yN = parts["Y"][-1]
    tN = float(yN[-1])
    tgt = nlp.ocp.q_target
    terminal = 0.0 if tgt is None else float(nlp.ocp.rho * np.sum((yN[: tgt.size] - tgt) ** 2))
    alg = parts["ALG"].reshape(-1, 3)
    pen = float(np.sum(alg[:, 0] * alg[:, 1] + (1.0 - alg[:, 0]) * alg[:, 2]))
    return {"t_final": tN, "terminal_penalty": terminal, "complementarity_sum": pen,
            "objective": tN + terminal + mu * pen}


STATE_GUESSES = ("hold", "line")


def initial_guess(ocp_or_nlp, T: float = 1.0, states: str = "hold") -> np.ndarray:
    """Primal starting point with w = 2T, u = 0 and a linear clock t_n = n h w / 2.

    ``states="hold"`` keeps x at its initial value. ``states="line"`` moves
    the positions on a straight line from q(0) to the target with the matching
    constant velocity, which avoids the spurious stationary point where w sits
    at its lower bound and the clock never starts. In both cases alpha = 1,
    lambda0 = 0 and lambda1 = max(psi(x_n), 0).
    """
    nlp = ocp_or_nlp if isinstance(ocp_or_nlp, TranscribedNlp) else transcribe(ocp_or_nlp)
    if states not in STATE_GUESSES:
        raise ValueError(f"states must be one of {STATE_GUESSES}, got {states!r}")
    ocp = nlp.ocp
    x = np.zeros(nlp.n)
    w = 2.0 * T
    Y = np.tile(ocp.y0, (nlp.N + 1, 1))
    Y[:, -1] = ocp.y0[-1] + np.arange(nlp.N + 1) * nlp.h * w / 2.0
    if states == "line" and ocp.q_target is not None:
        nq = ocp.q_target.size
        if 2 * nq != nlp.n_x:
            raise ValueError("the line guess needs a target for every position coordinate")
        s = np.linspace(0.0, 1.0, nlp.N + 1)[:, None]
        step = ocp.q_target - ocp.y0[:nq]
        Y[:, :nq] = ocp.y0[:nq] + s * step
        Y[:, nq:2 * nq] = step / T
    x[nlp.Y] = Y
    if nlp.n_c:
        psi = ocp.sys.psi(Y)
        x[nlp.ALG[:, :, 0]] = 1.0
        x[nlp.ALG[:, :, 1]] = 0.0
        x[nlp.ALG[:, :, 2]] = np.maximum(psi, 0.0)
    x[nlp.idx_w] = w
    return x


def complementarity_residual(nlp: TranscribedNlp, x) -> float:
    """Largest product over all pairs (alpha, lambda0) and (1 - alpha, lambda1)."""
    if not nlp.n_c:
        return 0.0
    x = np.asarray(x, dtype=float)
    if x.shape != (nlp.n,):
        raise ValueError("point does not match the transcription layout")
    a, l0, l1 = x[nlp.alpha_idx], x[nlp.lam0_idx], x[nlp.lam1_idx]
    return float(max(np.max(np.abs(a * l0)), np.max(np.abs((1.0 - a) * l1))))


# --------------------------------------------------------------------------- homotopy
class HomotopyError(RuntimeError):
    def __init__(self, stage: int, cause: Exception, stages: list):
        super().__init__(f"homotopy stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.stages = stages


@dataclass
class HomotopyResult:
    x: np.ndarray
    point: KktPoint
    stages: list
    comp_residual: float
    mu: float
    max_violation: float


def solve_homotopy(nlp: TranscribedNlp, schedule: HomotopySchedule = HomotopySchedule(),
                   x0=None, tol: float = 1e-8, max_iter: int = 500, solver: str = "ipm",
                   options: Optional[IpmOptions] = None, warm_mu: float = 1e-4,
                   log=None) -> HomotopyResult:
    """Solve the penalized NLPs for mu_i = mu0 * factor^i in sequence.

    Stage i + 1 starts from the primal-dual solution of stage i with a small
    initial barrier parameter ``warm_mu``. Without complementarity pairs there
    is nothing to penalize and a single NLP is solved. The default starting
    point is the straight-line guess when the OCP has a target.
    """
    solve = get_solver(solver)
    if x0 is None:
        x0 = initial_guess(nlp, states="line" if nlp.ocp.q_target is not None else "hold")
    x = np.asarray(x0, dtype=float)
    mus = schedule.values() if nlp.n_c else np.array([0.0])
    stages = []
    warm = None
    for i, mu in enumerate(mus):
        problem = nlp.smooth(float(mu)) if nlp.n_c else nlp.smooth()
        try:
            pt = solve(problem, x, tol=tol, max_iter=max_iter, warm=warm,
                       mu_init=None if warm is None else warm_mu, options=options)
        except NlpSolverError as exc:
            stages.append({"stage": i, "mu": float(mu), "status": type(exc).__name__,
                           "iterations": exc.point.iterations})
            raise HomotopyError(i, exc, stages) from exc
        x = pt.x
        warm = pt
        terms = objective_terms(nlp, x, float(mu))
        rec = {"stage": i, "mu": float(mu), "objective": pt.objective,
               "comp_residual": complementarity_residual(nlp, x), "iterations": pt.iterations,
               "t_final": terms["t_final"], "max_violation": float(np.max(np.abs(problem.constraints(x)), initial=0.0)),
               "status": pt.status}
        stages.append(rec)
        if log is not None:
            log(rec)
    return HomotopyResult(x, warm, stages, stages[-1]["comp_residual"], float(mus[-1]),
                          stages[-1]["max_violation"])


# --------------------------------------------------------------------------- recovery
@dataclass(eq=False)
class OcpSolution:
    trajectory: Trajectory
    physical: PhysicalTrajectory
    controls: np.ndarray  # per finite element
    control_times: np.ndarray  # physical start time of each retained element
    retained_controls: np.ndarray
    t_final: float
    w: float
    nodes: dict = field(default_factory=dict)


def extract_solution(nlp: TranscribedNlp, x, theta: float = FROZEN_THRESHOLD) -> OcpSolution:
    """Physical-time trajectory of a solved transcription.

    Finite elements whose clock advanced less than theta * h * w are frozen and
    dropped; controls are reported for the retained elements at their start time.
    """
    parts = nlp.unpack(x)
    Y, w = parts["Y"], parts["w"]
    h_tau = nlp.h * w
    tau = np.arange(nlp.N + 1) * h_tau
    u_elem = None
    if nlp.n_u:
        ctrl = [nlp.control_index(n) for n in range(nlp.N)]
        u_elem = parts["U"][ctrl]
    traj = Trajectory(tau, Y.copy(), "implicit-euler", h_tau, u_elem)
    phys = recover_physical(traj, theta)
    running = np.diff(Y[:, -1]) >= theta * h_tau
    if u_elem is None:
        u_elem = np.zeros((nlp.N, 0))
    return OcpSolution(traj, phys, u_elem, Y[:-1, -1][running], u_elem[running],
                       float(Y[-1, -1]), w, parts)
