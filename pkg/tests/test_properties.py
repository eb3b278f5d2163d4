"""Randomized invariants."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from timefreeze.dynamics import (
    AffineConstraint,
    AuxiliaryParams,
    StepMode,
    assemble_time_frozen,
    bouncing_ball,
    build_auxiliary,
    compute_damping,
    compute_tau_jump,
    eval_rhs,
    lp_kkt_residual,
    particle_3d,
    step,
    verify_assumption1,
)
from timefreeze.nlp import check_derivatives
from timefreeze.ocp import initial_guess, particle_ocp, penalize, transcribe
from timefreeze.simulate import EXPLICIT_EULER, RK4, integrate, recover_physical

stiffness = st.floats(0.5, 200.0)
restitution = st.floats(0.05, 1.0)
reals = st.floats(-50.0, 50.0, allow_nan=False)


@given(stiffness, restitution)
def test_underdamped(k, gamma):
    c = compute_damping(k, gamma)
    assert c * c < 4 * k
    assert (c == 0) == (gamma == 1.0)
    assert compute_tau_jump(k, gamma) == math.sqrt((math.pi ** 2 + math.log(gamma) ** 2) / k)


@settings(max_examples=20, deadline=None)
@given(stiffness, restitution)
def test_first_return_matches_formula(k, gamma):
    field = assemble_time_frozen(bouncing_ball(gamma), k).fields[0]
    rep = verify_assumption1(field, [0.0, -1.0], 1e-5)
    assert abs(rep.tau_return - compute_tau_jump(k, gamma)) <= 10 * 1e-5
    assert rep.stayed_in_Vminus


@given(reals)
def test_lp_kkt_step_is_kkt_point(z):
    s = step(z, StepMode("lp-kkt"))
    np.testing.assert_array_equal(lp_kkt_residual(z, s.value, *s.multipliers), 0.0)
    if z != 0:
        assert s.value == step(z).value


def test_lp_kkt_at_zero():
    s = step(0.0, StepMode("lp-kkt"))
    np.testing.assert_array_equal(lp_kkt_residual(0.0, s.value, *s.multipliers), 0.0)


@given(st.lists(reals, min_size=6, max_size=6), st.lists(reals, min_size=3, max_size=3))
def test_filippov_weights(x, u):
    sys = assemble_time_frozen(particle_3d(0.9), 100)
    y = np.array(x + [0.0])
    psi = sys.psi(y)
    alphas = 0.5 * (1 + np.sign(psi))
    rhs = eval_rhs(sys, y, np.array(u))
    assert 0.0 <= rhs[-1] <= 1.0
    assert rhs[-1] == np.prod(alphas)


@settings(max_examples=30)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda n: np.linalg.norm(n) > 0.1),
       st.lists(reals, min_size=6, max_size=6))
def test_aux_vanishes_on_complement(n, x):
    aux = build_auxiliary(AffineConstraint(n), AuxiliaryParams.from_stiffness(10, 0.7), 6)
    n = np.asarray(n) / np.linalg.norm(n)
    q, v = np.array(x[:3]), np.array(x[3:])
    q -= (n @ q) * n
    v -= (n @ v) * n
    assert np.linalg.norm(aux(np.concatenate([q, v]))) <= 1e-12 * max(1.0, np.abs(x).max())


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-3, 3), st.sampled_from([EXPLICIT_EULER, RK4]),
       st.floats(1e-3, 5e-2))
def test_clock_monotone(q0, v0, scheme, h):
    sys = assemble_time_frozen(bouncing_ball(0.8), 20)
    traj = integrate(sys, [q0, v0, 0.0], None, 3.0, h, scheme)
    inc = np.diff(traj.clock)
    assert inc.min() >= -1e-12
    assert inc.max() <= traj.h * (1 + 1e-9)
    assert np.all(np.diff(recover_physical(traj).t_grid) >= 0)


def test_transcribed_derivatives():
    nlp = transcribe(particle_ocp(N=50))
    rep = check_derivatives(penalize(nlp, 1e-3), initial_guess(nlp))
    assert rep.passed
