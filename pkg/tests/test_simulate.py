import numpy as np
import pytest

from timefreeze.dynamics import StateJumpSystem, assemble_time_frozen, bouncing_ball, mechanical_system, particle_3d
from timefreeze.simulate import (
    EXPLICIT_EULER,
    IMPLICIT_EULER,
    RK4,
    Trajectory,
    ZenoError,
    analytic_bouncing_ball,
    convergence_study,
    detect_jumps,
    fit_order,
    integrate,
    normalize_scheme,
    recover_physical,
    required_pseudo_time,
    terminal_state,
)

TAU_K5 = 1.4057528402495967
# hand-computed piecewise parabola for q0 = 0.5, v0 = 0, gamma = 0.9, g = 9.81
T_IMPACT = (0.3192754284070505, 0.8939711995397412)
X_AT_1 = (0.21385194915012595, 1.4968519491501253)


@pytest.fixture(scope="module")
def ball():
    return assemble_time_frozen(bouncing_ball(0.9), 5)


def free_fall():
    return assemble_time_frozen(mechanical_system([-9.81], [], 0.9), 5)


class TestOracle:
    def test_before_first_impact(self):
        q, v = analytic_bouncing_ball(0.5, 0.0, 0.9, 9.81, 0.3192)
        assert q == pytest.approx(0.0, abs=2e-3)
        assert v == pytest.approx(-3.132, abs=2e-3)

    def test_two_impacts(self):
        q, v = analytic_bouncing_ball(0.5, 0.0, 0.9, 9.81, 1.0)
        assert q == pytest.approx(X_AT_1[0], abs=1e-12)
        assert v == pytest.approx(X_AT_1[1], abs=1e-12)
        assert (round(q, 4), round(v, 3)) == (0.2139, 1.497)

    def test_initial(self):
        assert analytic_bouncing_ball(0.7, 0.0, 0.8, 9.81, 0.0) == (0.7, 0.0)

    def test_zeno_guard(self):
        with pytest.raises(ZenoError):
            analytic_bouncing_ball(0.5, 0.0, 0.5, 9.81, 10.0)


def test_required_pseudo_time():
    assert required_pseudo_time(1, 2, 1.4058) == pytest.approx(3.8116)
    assert required_pseudo_time(0.7, 0, 123.0) == 0.7
    assert required_pseudo_time(0.5, 3, 0.7029) == pytest.approx(2.6087)


class TestIntegrate:
    def test_step_count(self, ball):
        traj = integrate(ball, [1.0, 0.0, 0.0], None, 1.0, 0.3, EXPLICIT_EULER)
        assert traj.n_steps == 4
        assert traj.h == pytest.approx(0.25)
        assert traj.tau_grid[-1] == pytest.approx(1.0)

    def test_zero_field_constant(self):
        sys = assemble_time_frozen(mechanical_system([0.0, 0.0], [], 0.9), 5)
        y0 = [1.0, 2.0, 0.0, 0.0, 0.0]
        for scheme in (EXPLICIT_EULER, RK4, IMPLICIT_EULER):
            traj = integrate(sys, y0, None, 1.0, 0.1, scheme)
            np.testing.assert_allclose(traj.states[:, :4], np.tile(y0[:4], (11, 1)), atol=1e-12)

    def test_free_flight_rk4_exact(self):
        # a parabola is reproduced exactly by RK4
        traj = integrate(free_fall(), [2.0, 1.0, 0.0], None, 0.5, 0.01, RK4)
        t = traj.tau_grid
        np.testing.assert_allclose(traj.states[:, 0], 2 + t - 4.905 * t ** 2, atol=1e-12)

    def test_free_flight_euler_first_order(self):
        errs = []
        for h in (1e-2, 5e-3):
            traj = integrate(free_fall(), [2.0, 1.0, 0.0], None, 0.5, h, EXPLICIT_EULER)
            errs.append(abs(traj.states[-1, 0] - (2 + 0.5 - 4.905 * 0.25)))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)

    def test_smooth_rk4_order_four(self):
        osc = StateJumpSystem(2, lambda x, u=None: np.array([x[1], -x[0]]), (), 1.0)
        sys = assemble_time_frozen(osc, 1.0)
        M = np.array([40, 80, 160])
        E = []
        for m in M:
            traj = integrate(sys, [1.0, 0.0, 0.0], None, 2.0, 2.0 / (m // 4), RK4)
            E.append(np.linalg.norm(traj.states[-1, :2] - [np.cos(2.0), -np.sin(2.0)]))
        assert fit_order(M, E) == pytest.approx(4.0, abs=0.2)

    def test_clock_monotone(self, ball):
        for scheme in (EXPLICIT_EULER, RK4, IMPLICIT_EULER):
            traj = integrate(ball, [0.5, 0.0, 0.0], None, 3.8, 1e-2, scheme)
            inc = np.diff(traj.clock)
            assert inc.min() >= -1e-12
            assert inc.max() <= traj.h * (1 + 1e-12)

    def test_bad_arguments(self, ball):
        with pytest.raises(ValueError):
            integrate(ball, [0.5, 0.0, 0.0], None, 1.0, -1.0)
        with pytest.raises(ValueError):
            integrate(ball, [0.5, 0.0, 0.0], None, 0.0, 0.1)
        with pytest.raises(ValueError):
            normalize_scheme("leapfrog")

    def test_implicit_matches_explicit(self, ball):
        a = integrate(ball, [0.5, 0.0, 0.0], None, 3.8116, 1e-4, EXPLICIT_EULER)
        b = integrate(ball, [0.5, 0.0, 0.0], None, 3.8116, 1e-4, IMPLICIT_EULER)
        xa = terminal_state(recover_physical(a), 1.0)
        xb = terminal_state(recover_physical(b), 1.0)
        assert np.linalg.norm(xa - xb) < 5e-2


class TestRecover:
    def test_jump_times(self, ball):
        tau_f = required_pseudo_time(1.0, 2, TAU_K5)
        traj = integrate(ball, [0.5, 0.0, 0.0], None, tau_f, 1e-4, RK4)
        jumps = detect_jumps(traj, ball)
        assert len(jumps) == 2
        assert [j.t for j in jumps] == pytest.approx(T_IMPACT, abs=2e-3)
        phys = recover_physical(traj)
        assert np.all(np.diff(phys.t_grid) >= 0)
        flips = np.flatnonzero((phys.states[:-1, 1] < 0) & (phys.states[1:, 1] > 0))
        assert phys.t_grid[flips] == pytest.approx(T_IMPACT, abs=2e-3)

    def test_no_frozen_identity(self):
        traj = integrate(free_fall(), [2.0, 0.0, 0.0], None, 0.5, 0.01, RK4)
        phys = recover_physical(traj)
        assert not phys.frozen_mask.any()
        np.testing.assert_array_equal(phys.states, traj.states[:, :-1])
        np.testing.assert_allclose(phys.t_grid, traj.tau_grid, atol=1e-12)

    def test_fully_frozen(self, ball):
        traj = integrate(ball, [-0.3, 0.0, 0.0], None, 0.05, 0.01, EXPLICIT_EULER)
        assert len(recover_physical(traj)) <= 1

    def test_hand_built(self):
        states = np.array([[0.0, 0.0], [1.0, 0.1], [2.0, 0.1], [3.0, 0.2]])
        traj = Trajectory(np.array([0.0, 0.1, 0.2, 0.3]), states, "rk4", 0.1)
        phys = recover_physical(traj)
        np.testing.assert_array_equal(phys.frozen_mask, [False, False, True, False])
        np.testing.assert_array_equal(phys.states[:, 0], [0.0, 1.0, 3.0])

    def test_terminal_interpolation(self):
        states = np.array([[0.0, 0.0], [1.0, 0.1], [3.0, 0.2]])
        phys = recover_physical(Trajectory(np.array([0.0, 0.1, 0.2]), states, "rk4", 0.1))
        np.testing.assert_allclose(terminal_state(phys, 0.15), [2.0])


class TestConvergence:
    def test_fit_order(self):
        M = np.array([10, 100, 1000])
        assert fit_order(M, 3.0 / M) == pytest.approx(1.0)
        assert fit_order(M, M ** -4.0) == pytest.approx(4.0)

    def test_euler_halving(self, ball):
        oracle = lambda t: np.array(analytic_bouncing_ball(0.5, 0.0, 0.9, 9.81, t))
        tau_f = required_pseudo_time(1.0, 2, TAU_K5)
        table = convergence_study(ball, [0.5, 0.0, 0.0], oracle, tau_f, 1.0, [EXPLICIT_EULER],
                                  [20000, 40000, 80000])
        E = table.errors(EXPLICIT_EULER)
        assert np.all(E[1:] / E[:-1] == pytest.approx(0.5, abs=0.1))
        assert table.inversions(EXPLICIT_EULER) == 0

    def test_rk4_needs_multiples_of_four(self, ball):
        with pytest.raises(ValueError):
            convergence_study(ball, [0.5, 0.0, 0.0], lambda t: np.zeros(2), 1.0, 1.0, [RK4], [10, 22])

    def test_threads_deterministic(self, ball):
        oracle = lambda t: np.array(analytic_bouncing_ball(0.5, 0.0, 0.9, 9.81, t))
        args = (ball, [0.5, 0.0, 0.0], oracle, 3.8116, 1.0, [EXPLICIT_EULER, RK4], [4000, 8000])
        a = convergence_study(*args, threads=1)
        b = convergence_study(*args, threads=3)
        assert a.rows == b.rows


def test_particle_impacts_order():
    sys = assemble_time_frozen(particle_3d(0.9), 100)
    y0 = [4.0, 4.0, 1.0, -3.0, -3.5, 0.0, 0.0]
    traj = integrate(sys, y0, np.zeros(3), 2.0 + 6 * sys.aux_params[0].tau_jump, 1e-3, RK4)
    walls = [j.constraints for j in detect_jumps(traj, sys) if j.constraints != (2,)]
    assert walls[:2] == [(1,), (0,)]
