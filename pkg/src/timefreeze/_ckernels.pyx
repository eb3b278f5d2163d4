# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for fixed-step integration of time-frozen mechanical systems.

The pure-Python twin lives in ``_pykernels.py``; both expose the same functions
with identical signatures and semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, fabs

cnp.import_array()

cdef enum:
    MAXDIM = 64


cdef inline double _step(double z, double eps) noexcept nogil:
    if eps > 0.0:
        return 0.5 * (1.0 + tanh(0.5 * z / eps))
    if z > 0.0:
        return 1.0
    if z < 0.0:
        return 0.0
    return 0.5


cdef void _rhs(const double* y, const double* a, int m, int nc,
               const double* normals, const double* offsets,
               const double* ks, const double* cs, double eps,
               double* out) noexcept nogil:
    cdef int i, j
    cdef double prod = 1.0, eta, nu, wgt, force
    cdef double alpha[MAXDIM]
    for i in range(nc):
        eta = offsets[i]
        for j in range(m):
            eta += normals[i * m + j] * y[j]
        alpha[i] = _step(eta, eps)
        prod *= alpha[i]
    for j in range(m):
        out[j] = prod * y[m + j]
        out[m + j] = prod * a[j]
    out[2 * m] = prod
    for i in range(nc):
        wgt = 1.0 - alpha[i]
        if wgt == 0.0:
            continue
        eta = offsets[i]
        nu = 0.0
        for j in range(m):
            eta += normals[i * m + j] * y[j]
            nu += normals[i * m + j] * y[m + j]
        force = -ks[i] * eta - cs[i] * nu
        for j in range(m):
            out[j] += wgt * normals[i * m + j] * nu
            out[m + j] += wgt * normals[i * m + j] * force


def integrate_mechanical(const double[::1] y0, const double[:, ::1] normals,
                         const double[::1] offsets, const double[::1] ks, const double[::1] cs, const double[:, :] accel,
                         double h, Py_ssize_t n_steps, int scheme, double eps=0.0):
    """Fixed-step explicit Euler (scheme 0) or RK4 (scheme 1).

    State layout is (q, v, t) with q, v of length m. ``accel`` holds the
    free-flight acceleration per step, shape (n_steps, m).
    """
    cdef int m = normals.shape[1]
    cdef int nc = normals.shape[0]
    cdef int ny = 2 * m + 1
    if ny > MAXDIM or nc > MAXDIM:
        raise ValueError("system too large for the compiled kernel")
    if y0.shape[0] != ny:
        raise ValueError("y0 has wrong length")
    if accel.shape[0] < n_steps or accel.shape[1] != m:
        raise ValueError("accel has wrong shape")
    out_arr = np.empty((n_steps + 1, ny))
    cdef double[:, ::1] out = out_arr
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double tmp[MAXDIM]
    cdef double a[MAXDIM]
    cdef Py_ssize_t n
    cdef int j
    cdef double hh = 0.5 * h, h6 = h / 6.0
    for j in range(ny):
        out[0, j] = y0[j]
    with nogil:
        for n in range(n_steps):
            for j in range(m):
                a[j] = accel[n, j]
            _rhs(&out[n, 0], a, m, nc, &normals[0, 0], &offsets[0], &ks[0], &cs[0], eps, k1)
            if scheme == 0:
                for j in range(ny):
                    out[n + 1, j] = out[n, j] + h * k1[j]
                continue
            for j in range(ny):
                tmp[j] = out[n, j] + hh * k1[j]
            _rhs(tmp, a, m, nc, &normals[0, 0], &offsets[0], &ks[0], &cs[0], eps, k2)
            for j in range(ny):
                tmp[j] = out[n, j] + hh * k2[j]
            _rhs(tmp, a, m, nc, &normals[0, 0], &offsets[0], &ks[0], &cs[0], eps, k3)
            for j in range(ny):
                tmp[j] = out[n, j] + h * k3[j]
            _rhs(tmp, a, m, nc, &normals[0, 0], &offsets[0], &ks[0], &cs[0], eps, k4)
            for j in range(ny):
                out[n + 1, j] = out[n, j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return out_arr


cdef void _affine(const double* A, const double* b, const double* x, int d,
                  double* out) noexcept nogil:
    cdef int i, j
    cdef double s
    for i in range(d):
        s = b[i]
        for j in range(d):
            s += A[i * d + j] * x[j]
        out[i] = s


cdef void _rk4_affine(const double* A, const double* b, const double* x, int d,
                      double s, double* out) noexcept nogil:
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double tmp[MAXDIM]
    cdef int j
    _affine(A, b, x, d, k1)
    for j in range(d):
        tmp[j] = x[j] + 0.5 * s * k1[j]
    _affine(A, b, tmp, d, k2)
    for j in range(d):
        tmp[j] = x[j] + 0.5 * s * k2[j]
    _affine(A, b, tmp, d, k3)
    for j in range(d):
        tmp[j] = x[j] + s * k3[j]
    _affine(A, b, tmp, d, k4)
    for j in range(d):
        out[j] = x[j] + s / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


cdef inline double _dot(const double* g, const double* x, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int j
    for j in range(d):
        s += g[j] * x[j]
    return s


def linear_first_return(const double[:, ::1] A, const double[::1] b, const double[::1] x0,
                        const double[::1] g, double offset, double dt, Py_ssize_t max_steps):
    """RK4 on x' = A x + b from x0 until psi = g.x + offset first becomes >= 0.

    Returns ``(tau, x_return, stayed_negative)`` or ``None`` when no return
    happens within ``max_steps`` steps. The crossing inside the last step is
    located by bisection on the RK4 sub-step length.
    """
    cdef int d = A.shape[0]
    if d > MAXDIM:
        raise ValueError("system too large for the compiled kernel")
    cdef double x[MAXDIM]
    cdef double xn[MAXDIM]
    cdef double xm[MAXDIM]
    cdef int j, it
    cdef Py_ssize_t n
    cdef double psi, lo, hi, mid
    cdef bint negative = True, found = False
    for j in range(d):
        x[j] = x0[j]
    with nogil:
        for n in range(max_steps):
            _rk4_affine(&A[0, 0], &b[0], x, d, dt, xn)
            psi = _dot(&g[0], xn, d) + offset
            if psi >= 0.0:
                if n == 0:
                    negative = False
                found = True
                break
            for j in range(d):
                x[j] = xn[j]
    if not found:
        return None
    lo, hi = 0.0, dt
    with nogil:
        for it in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            _rk4_affine(&A[0, 0], &b[0], x, d, mid, xm)
            if _dot(&g[0], xm, d) + offset >= 0.0:
                hi = mid
            else:
                lo = mid
        _rk4_affine(&A[0, 0], &b[0], x, d, hi, xm)
    x_ret = np.array([xm[j] for j in range(d)])
    return n * dt + hi, x_ret, bool(negative)
