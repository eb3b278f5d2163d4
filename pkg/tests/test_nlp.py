import io
import json

import numpy as np
import pytest

from timefreeze.nlp import (
    Block,
    Dual,
    IpmOptions,
    MaxIterations,
    SmoothNlp,
    ad_eval,
    available_solvers,
    check_derivatives,
    dense_nlp,
    get_solver,
    register_solver,
    seed,
    solve,
)


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestAd:
    def test_sin_at_zero(self):
        out = ad_eval(lambda x: np.sin(x[0]), [0.0])
        assert out["jacobian"][0] == 1.0

    def test_product(self):
        out = ad_eval(lambda x: x[0] * x[1], [2.0, 3.0])
        np.testing.assert_array_equal(out["jacobian"], [3.0, 2.0])

    def test_against_fd(self):
        f = lambda x: np.exp(x[0]) * np.cos(x[1]) + np.log(x[2]) * np.sqrt(x[0] + x[2]) - np.tanh(x[1] / x[2])
        x = np.array([0.3, -0.7, 1.9])
        out = ad_eval(f, x, order=2)
        np.testing.assert_allclose(out["jacobian"], fd_gradient(f, x), rtol=1e-7)
        H = out["hessian"]
        np.testing.assert_allclose(H, H.T, atol=1e-14)
        Hfd = np.array([fd_gradient(lambda y: ad_eval(f, y)["jacobian"][i], x) for i in range(3)])
        np.testing.assert_allclose(H, Hfd, rtol=1e-6, atol=1e-8)

    def test_vector_output(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]])
        out = ad_eval(lambda x: A @ x ** 2, [1.0, 2.0])
        np.testing.assert_allclose(out["jacobian"], A * np.array([2.0, 4.0]))

    def test_power_and_division(self):
        out = ad_eval(lambda x: x[0] ** 3 / (1 + x[1] ** 2), [2.0, 1.0], order=2)
        assert out["value"] == pytest.approx(4.0)
        np.testing.assert_allclose(out["jacobian"], [6.0, -4.0])

    def test_log_domain(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            val = ad_eval(lambda x: np.log(x[0]), [-1.0])["value"]
        assert np.isnan(val)

    def test_seed_batched(self):
        d = seed(np.ones((4, 3)))
        assert isinstance(d, Dual)
        assert d.grad.shape == (4, 3, 3)


def quad_nlp(Q, c, A, b):
    f = lambda x: 0.5 * x @ (Q @ x) + c @ x
    g = lambda x: A @ x - b
    return dense_nlp(Q.shape[0], f, g, A.shape[0])


def kkt_solution(Q, c, A, b):
    n, m = Q.shape[0], A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-c, b]))
    return sol[:n], sol[n:]


class TestIpm:
    def test_unconstrained(self):
        nlp = dense_nlp(1, lambda x: (x[0] - 1) ** 2)
        pt = solve(nlp, [5.0])
        assert pt.x[0] == pytest.approx(1.0, abs=1e-8)

    def test_equality(self):
        nlp = dense_nlp(2, lambda x: x[0] ** 2 + x[1] ** 2, lambda x: x[0] + x[1] - 1, 1)
        pt = solve(nlp, [0.0, 0.0])
        np.testing.assert_allclose(pt.x, [0.5, 0.5], atol=1e-8)
        # Lagrangian f + nu c gives nu = -1
        assert pt.nu[0] == pytest.approx(-1.0, abs=1e-8)

    @pytest.mark.parametrize("z,w", [(2.0, 1.0), (-3.0, 0.0)])
    def test_step_lp(self, z, w):
        nlp = dense_nlp(1, lambda x: -z * x[0], lower=[0.0], upper=[1.0])
        pt = solve(nlp, [0.5])
        assert pt.x[0] == pytest.approx(w, abs=1e-7)
        assert pt.z_L.min() >= 0 and pt.z_U.min() >= 0

    def test_random_qps(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.integers(2, 21))
            m = int(rng.integers(1, n))
            R = rng.normal(size=(n, n))
            Q = R @ R.T + 0.1 * np.eye(n)
            c, A, b = rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m)
            pt = solve(quad_nlp(Q, c, A, b), np.zeros(n))
            x_ref, nu_ref = kkt_solution(Q, c, A, b)
            np.testing.assert_allclose(pt.x, x_ref, atol=1e-8)
            np.testing.assert_allclose(pt.nu, nu_ref, atol=1e-7)

    def test_warm_start(self):
        nlp = dense_nlp(3, lambda x: np.sum((x - np.array([0.2, 0.4, 2.0])) ** 2) + x[0] * x[1],
                        lambda x: x[0] + 2 * x[1] - x[2] ** 2 + 1, 1,
                        lower=[0.0, 0.0, -5.0], upper=[1.0, 1.0, 5.0])
        pt = solve(nlp, [0.5, 0.5, 0.0])
        again = solve(nlp, pt.x, warm=pt, mu_init=pt.mu)
        assert again.iterations <= 2
        assert again.kkt_error <= 1e-8
        # x[0] sits on its bound, where x is only pinned to about sqrt(tol)
        np.testing.assert_allclose(again.x, pt.x, atol=1e-4)

    def test_iterates_interior(self):
        seen = []
        opts = IpmOptions(callback=lambda it, x: seen.append(x))
        nlp = dense_nlp(2, lambda x: (x[0] + 1) ** 2 + (x[1] - 3) ** 2, lower=[0.0, 0.0],
                        upper=[2.0, 2.0])
        pt = solve(nlp, [1.0, 1.0], options=opts)
        np.testing.assert_allclose(pt.x, [0.0, 2.0], atol=1e-7)
        X = np.array(seen)
        assert np.all(X > 0) and np.all(X < 2)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        Q = np.diag(rng.uniform(1, 2, 6))
        args = (Q, rng.normal(size=6), rng.normal(size=(2, 6)), rng.normal(size=2))
        a = solve(quad_nlp(*args), np.zeros(6))
        b = solve(quad_nlp(*args), np.zeros(6))
        assert a.history == b.history
        assert np.array_equal(a.x, b.x)

    def test_max_iterations_carries_point(self):
        nlp = dense_nlp(2, lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        with pytest.raises(MaxIterations) as err:
            solve(nlp, [-1.2, 1.0], max_iter=2)
        assert err.value.point.x.shape == (2,)

    def test_json_log(self):
        buf = io.StringIO()
        solve(dense_nlp(1, lambda x: (x[0] - 1) ** 2), [3.0], options=IpmOptions(log=buf))
        lines = buf.getvalue().splitlines()
        assert lines and "mu" in json.loads(lines[0])

    def test_solver_registry(self):
        assert "ipm" in available_solvers()
        assert get_solver("ipm") is solve
        register_solver("alias", solve)
        assert get_solver("alias") is solve
        with pytest.raises(KeyError):
            get_solver("nope")


class TestProblem:
    def test_blocks_scatter(self):
        # f = sum (x_i - x_{i+1})^2 as three element blocks, c = x_0 + x_3 - 1
        idx = np.array([[0, 1], [1, 2], [2, 3]])
        fb = Block(idx, lambda v: (v[:, 0] - v[:, 1]) ** 2, 1)
        cb = Block(np.array([[0, 3]]), lambda v: v[:, 0] + v[:, 1] - 1.0, 1)
        nlp = SmoothNlp(4, (fb,), (cb,))
        x = np.array([1.0, 0.5, 0.2, 0.0])
        assert nlp.objective(x) == pytest.approx(0.25 + 0.09 + 0.04)
        np.testing.assert_allclose(nlp.gradient(x), [1.0, -0.4, -0.2, -0.4])
        np.testing.assert_allclose(nlp.jacobian(x), [[1.0, 0.0, 0.0, 1.0]])
        assert check_derivatives(nlp, x).max_discrepancy <= 1e-9

    def test_polynomial_check(self):
        nlp = dense_nlp(3, lambda x: x[0] ** 3 * x[1] + x[2] ** 4, lambda x: x[0] * x[1] * x[2], 1)
        rep = check_derivatives(nlp, np.array([0.7, -1.3, 2.1]))
        assert rep.passed
        assert rep.max_discrepancy <= 1e-9

    def test_kink_flagged(self):
        nlp = dense_nlp(1, lambda x: np.abs(x[0]))
        rep = check_derivatives(nlp, np.array([0.0]))
        assert not rep.passed

    def test_bounds_validated(self):
        with pytest.raises(ValueError):
            dense_nlp(1, lambda x: x[0] ** 2, lower=[1.0], upper=[0.0])
