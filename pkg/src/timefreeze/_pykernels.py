"""Pure-Python twin of ``_ckernels``.

Used when the compiled extension is unavailable or when
``TIMEFREEZE_PURE_PYTHON`` is set. Same signatures, same results up to roundoff.
"""
from __future__ import annotations

import math

import numpy as np

_CHUNK = 2048


def _step(z: float, eps: float) -> float:
    if eps > 0.0:
        return 0.5 * (1.0 + math.tanh(0.5 * z / eps))
    if z > 0.0:
        return 1.0
    if z < 0.0:
        return 0.0
    return 0.5


def _make_rhs(normals, offsets, ks, cs, eps):
    m = len(normals[0])
    nc = len(normals)
    rm = range(m)
    rc = range(nc)

    def rhs(y, a):
        prod = 1.0
        alphas = [0.0] * nc
        etas = [0.0] * nc
        for i in rc:
            ni = normals[i]
            eta = offsets[i]
            for j in rm:
                eta += ni[j] * y[j]
            etas[i] = eta
            alphas[i] = _step(eta, eps)
            prod *= alphas[i]
        out = [prod * y[m + j] for j in rm] + [prod * a[j] for j in rm] + [prod]
        for i in rc:
            wgt = 1.0 - alphas[i]
            if wgt == 0.0:
                continue
            ni = normals[i]
            nu = 0.0
            for j in rm:
                nu += ni[j] * y[m + j]
            force = -ks[i] * etas[i] - cs[i] * nu
            for j in rm:
                out[j] += wgt * ni[j] * nu
                out[m + j] += wgt * ni[j] * force
        return out

    return rhs


def integrate_mechanical(y0, normals, offsets, ks, cs, accel, h, n_steps, scheme, eps=0.0):
    """Fixed-step explicit Euler (scheme 0) or RK4 (scheme 1); see ``_ckernels``."""
    normals = np.asarray(normals, dtype=float).tolist()
    m = len(normals[0])
    ny = 2 * m + 1
    y = [float(v) for v in y0]
    if len(y) != ny:
        raise ValueError("y0 has wrong length")
    accel = np.asarray(accel, dtype=float)
    if accel.shape[0] < n_steps or accel.shape[1] != m:
        raise ValueError("accel has wrong shape")
    rhs = _make_rhs(normals, [float(b) for b in offsets], [float(k) for k in ks],
                    [float(c) for c in cs], float(eps))
    out = np.empty((n_steps + 1, ny))
    out[0] = y
    hh = 0.5 * h
    h6 = h / 6.0
    rj = range(ny)
    # Broadcast accelerations (stride 0) are common; avoid per-step array access then.
    constant = accel.strides[0] == 0
    a = accel[0].tolist() if n_steps else []
    for n in range(n_steps):
        if not constant:
            a = accel[n].tolist()
        k1 = rhs(y, a)
        if scheme == 0:
            y = [y[j] + h * k1[j] for j in rj]
        else:
            k2 = rhs([y[j] + hh * k1[j] for j in rj], a)
            k3 = rhs([y[j] + hh * k2[j] for j in rj], a)
            k4 = rhs([y[j] + h * k3[j] for j in rj], a)
            y = [y[j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in rj]
        out[n + 1] = y
    return out


def _rk4_affine(A, b, x, s):
    k1 = A @ x + b
    k2 = A @ (x + 0.5 * s * k1) + b
    k3 = A @ (x + 0.5 * s * k2) + b
    k4 = A @ (x + s * k3) + b
    return x + s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_map(A, b, dt):
    """Homogeneous matrix of one RK4 step for the affine ODE x' = A x + b."""
    d = A.shape[0]
    M = np.zeros((d + 1, d + 1))
    M[:d, :d] = A
    M[:d, d] = b
    hM = dt * M
    P = np.eye(d + 1) + hM @ (np.eye(d + 1) + hM / 2 @ (np.eye(d + 1) + hM / 3 @ (np.eye(d + 1) + hM / 4)))
    return P


def linear_first_return(A, b, x0, g, offset, dt, max_steps):
    """Chunked RK4 on x' = A x + b until g.x + offset >= 0; see ``_ckernels``.

    Steps are taken in blocks: the RK4 map is affine, so the states of a whole
    block follow from precomputed powers of its homogeneous matrix.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    g = np.asarray(g, dtype=float)
    d = A.shape[0]
    P = _rk4_map(A, b, dt)
    powers = np.empty((_CHUNK, d + 1, d + 1))
    acc = np.eye(d + 1)
    for j in range(_CHUNK):
        acc = P @ acc
        powers[j] = acc
    gh = np.append(g, offset)
    psi_rows = powers.transpose(0, 2, 1) @ gh  # (chunk, d+1): psi of step j from a homogeneous start
    x = np.append(np.asarray(x0, dtype=float), 1.0)
    done = 0
    while done < max_steps:
        count = min(_CHUNK, max_steps - done)
        psi = psi_rows[:count] @ x
        hit = np.flatnonzero(psi >= 0.0)
        if hit.size:
            j = int(hit[0])
            n = done + j
            start = (powers[j - 1] @ x)[:d] if j > 0 else x[:d]
            negative = n > 0
            lo, hi = 0.0, dt
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if g @ _rk4_affine(A, b, start, mid) + offset >= 0.0:
                    hi = mid
                else:
                    lo = mid
            return n * dt + hi, _rk4_affine(A, b, start, hi), bool(negative)
        x = powers[count - 1] @ x
        done += count
    return None
