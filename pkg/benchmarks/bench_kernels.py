"""Compare the compiled and pure-Python integration kernels.

    python benchmarks/bench_kernels.py [--repeat 3]

Each case runs both backends on identical inputs, checks that the results
agree and prints the best wall time of each and the speed-up.
"""
import argparse
import time

import numpy as np

from timefreeze import _pykernels
from timefreeze.dynamics import assemble_time_frozen, bouncing_ball, particle_3d

try:
    from timefreeze import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def mechanical_args(sys, y0, accel, h, n_steps, scheme):
    return (np.asarray(y0, dtype=float), np.ascontiguousarray([c.normal for c in sys.constraints]),
            np.array([c.offset for c in sys.constraints]), np.array([p.k for p in sys.aux_params]),
            np.array([p.c for p in sys.aux_params]),
            np.broadcast_to(np.asarray(accel, dtype=float), (n_steps, len(accel))), h, n_steps, scheme)


def cases():
    ball = assemble_time_frozen(bouncing_ball(0.9), 5.0)
    particle = assemble_time_frozen(particle_3d(0.9), 100.0)
    field = ball.fields[0]
    yield ("ball, explicit Euler, 38k steps", "integrate_mechanical",
           mechanical_args(ball, [0.5, 0.0, 0.0], [-9.81], 1e-4, 38116, 0))
    yield ("ball, RK4, 38k steps", "integrate_mechanical",
           mechanical_args(ball, [0.5, 0.0, 0.0], [-9.81], 1e-4, 38116, 1))
    yield ("particle, RK4, 62k steps", "integrate_mechanical",
           mechanical_args(particle, [4, 4, 1, -3, -3.5, 0, 0], [0, 0, -9.81], 1e-4, 62173, 1))
    yield ("first return, dt = 1e-6", "linear_first_return",
           (np.ascontiguousarray(field.matrix), np.ascontiguousarray(field.shift),
            np.array([0.0, -1.0]), np.ascontiguousarray(field.psi_row), 0.0, 1e-6, 20_000_000))


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    print(f"{'case':34s} {'cython':>10s} {'python':>10s} {'speed-up':>9s}")
    for name, func, fargs in cases():
        tc, oc = best_of(getattr(_ckernels, func), fargs, args.repeat)
        tp, op = best_of(getattr(_pykernels, func), fargs, args.repeat)
        a = oc if func == "integrate_mechanical" else oc[1]
        b = op if func == "integrate_mechanical" else op[1]
        assert np.allclose(a, b, rtol=0, atol=1e-9), name
        print(f"{name:34s} {tc:9.4f}s {tp:9.4f}s {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
