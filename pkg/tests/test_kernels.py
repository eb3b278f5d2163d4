"""The compiled and pure-Python kernels must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from timefreeze import _pykernels, kernels
from timefreeze.dynamics import assemble_time_frozen, bouncing_ball, particle_3d

ck = pytest.importorskip("timefreeze._ckernels")


def particle_args(n_steps, scheme, eps=0.0):
    sys_ = assemble_time_frozen(particle_3d(0.9), 100)
    accel = np.broadcast_to(np.array([0.0, 0.0, -9.81]), (n_steps, 3))
    return (np.array([4.0, 4.0, 1.0, -3.0, -3.5, 0.0, 0.0]), np.eye(3), np.zeros(3),
            np.array([p.k for p in sys_.aux_params]), np.array([p.c for p in sys_.aux_params]),
            accel, 1e-3, n_steps, scheme, eps)


@pytest.mark.parametrize("scheme", [0, 1])
@pytest.mark.parametrize("eps", [0.0, 0.05])
def test_integrate_equivalence(scheme, eps):
    args = particle_args(3000, scheme, eps)
    a = ck.integrate_mechanical(*args)
    b = _pykernels.integrate_mechanical(*args)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_varying_accel_equivalence():
    rng = np.random.default_rng(2)
    args = list(particle_args(500, 1))
    args[5] = np.ascontiguousarray(rng.normal(size=(500, 3)))
    np.testing.assert_allclose(ck.integrate_mechanical(*args), _pykernels.integrate_mechanical(*args),
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("x0", [[0.0, -1.0], [0.0, -5.0]])
def test_first_return_equivalence(x0):
    field = assemble_time_frozen(bouncing_ball(0.9), 5).fields[0]
    args = (np.ascontiguousarray(field.matrix), np.ascontiguousarray(field.shift), np.array(x0),
            np.ascontiguousarray(field.psi_row), 0.0, 1e-4, 200000)
    ta, xa, na = ck.linear_first_return(*args)
    tb, xb, nb = _pykernels.linear_first_return(*args)
    assert ta == pytest.approx(tb, abs=1e-12)
    np.testing.assert_allclose(xa, xb, atol=1e-10)
    assert na == nb


def test_first_return_none():
    field = assemble_time_frozen(bouncing_ball(0.9), 5).fields[0]
    args = (np.ascontiguousarray(field.matrix), np.ascontiguousarray(field.shift),
            np.array([0.0, -1.0]), np.ascontiguousarray(field.psi_row), 0.0, 1e-3, 100)
    assert ck.linear_first_return(*args) is None
    assert _pykernels.linear_first_return(*args) is None


def test_backend_env_switch():
    env = dict(os.environ, TIMEFREEZE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import timefreeze; print(timefreeze.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    if not os.environ.get("TIMEFREEZE_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"
