# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop for swarm runs with tracked attractors.

Mirrors ``sapso._fallback.run_tracked`` operation for operation.
"""
from libc.math cimport cos, isfinite, M_PI

cdef enum:
    MODE_GPSO = 0
    MODE_CLASSIC = 1


cdef inline double _objective(int obj_id, const double[::1] xs, Py_ssize_t off,
                              Py_ssize_t dim) noexcept nogil:
    cdef double s, xd
    cdef Py_ssize_t d
    if obj_id == 0:
        s = 0.0
        for d in range(dim):
            s += xs[off + d] * xs[off + d]
    else:
        s = 10.0 * dim
        for d in range(dim):
            xd = xs[off + d]
            s += xd * xd - 10.0 * cos(2.0 * M_PI * xd)
    return s


def run_tracked(double[::1] theta, double[:, ::1] pr, double[::1] pr_f,
                double[:, ::1] pg, double[::1] pg_f,
                const double[:, :, ::1] U, const double[:, ::1] eta,
                const long long[:, ::1] nbr, int obj_id, int mode,
                double eps, double k1, double k2, double chi, double c1, double c2,
                double g, double w,
                double[:, ::1] out_states, double[:, ::1] out_pr, double[:, ::1] out_pg,
                double limit):
    """Advance ``U.shape[0]`` steps in place; returns ``(steps_done, diverged)``."""
    cdef Py_ssize_t steps = U.shape[0]
    cdef Py_ssize_t r = pr.shape[0]
    cdef Py_ssize_t dim = pr.shape[1]
    cdef Py_ssize_t n = r * dim
    cdef Py_ssize_t m = nbr.shape[1]
    cdef bint noisy = eta.shape[0] > 0
    cdef Py_ssize_t k, i, d, j, q, jb
    cdef double prj, pgj, xj, vj, a, vn, xn, ss, fx, best
    cdef double limit2 = limit * limit
    cdef Py_ssize_t stopped = -1
    with nogil:
        for k in range(steps):
            ss = 0.0
            for i in range(r):
                for d in range(dim):
                    j = i * dim + d
                    prj = pr[i, d]
                    pgj = pg[i, d]
                    if noisy:
                        prj = prj + eta[k, j]
                        pgj = pgj + eta[k, n + j]
                    vj = theta[j]
                    xj = theta[n + j]
                    a = c1 * U[k, 0, j] * (prj - xj) + c2 * U[k, 1, j] * (pgj - xj)
                    if mode == MODE_GPSO:
                        vn = vj + eps * (k1 * vj + chi * a)
                        xn = xj + eps * (k2 * vj + chi * a)
                    else:
                        vn = g * (w * vj + a)
                        xn = xj + vn
                    out_states[k, j] = vn
                    out_states[k, n + j] = xn
                    ss += vn * vn + xn * xn
            if not isfinite(ss) or ss > limit2:
                stopped = k
                break
            for j in range(2 * n):
                theta[j] = out_states[k, j]
            for i in range(r):
                fx = _objective(obj_id, theta, n + i * dim, dim)
                if fx < pr_f[i]:
                    pr_f[i] = fx
                    for d in range(dim):
                        pr[i, d] = theta[n + i * dim + d]
            for i in range(r):
                jb = nbr[i, 0]
                best = pr_f[jb]
                for q in range(1, m):
                    if pr_f[nbr[i, q]] < best:
                        jb = nbr[i, q]
                        best = pr_f[jb]
                if best < pg_f[i]:
                    pg_f[i] = best
                    for d in range(dim):
                        pg[i, d] = pr[jb, d]
            for i in range(r):
                for d in range(dim):
                    out_pr[k, i * dim + d] = pr[i, d]
                    out_pg[k, i * dim + d] = pg[i, d]
    if stopped >= 0:
        return stopped, True
    return steps, False
