"""Pure-Python twin of the compiled kernel in ``_kernels.pyx``.

Same signature and same floating-point operation order, so both backends
produce bit-identical trajectories.  ``obj_id`` may also be a callable
``f(x) -> float`` here, which the compiled kernel does not accept.
"""
import numpy as np

from .core import _libm_values

MODE_GPSO = 0
MODE_CLASSIC = 1


def run_tracked(theta, pr, pr_f, pg, pg_f, U, eta, nbr, obj_id, mode,
                eps, k1, k2, chi, c1, c2, g, w,
                out_states, out_pr, out_pg, limit):
    steps = U.shape[0]
    r, dim = pr.shape
    n = r * dim
    noisy = eta.shape[0] > 0
    limit2 = limit * limit
    if callable(obj_id):
        fn = obj_id

        def values(x):
            return np.array([float(fn(row)) for row in x])
    else:
        def values(x):
            return _libm_values(obj_id, x)

    for k in range(steps):
        prn = pr.reshape(-1)
        pgn = pg.reshape(-1)
        if noisy:
            prn = prn + eta[k, :n]
            pgn = pgn + eta[k, n:]
        v = theta[:n]
        x = theta[n:]
        a = c1 * U[k, 0] * (prn - x) + c2 * U[k, 1] * (pgn - x)
        if mode == MODE_GPSO:
            vn = v + eps * (k1 * v + chi * a)
            xn = x + eps * (k2 * v + chi * a)
        else:
            vn = g * (w * v + a)
            xn = x + vn
        out_states[k, :n] = vn
        out_states[k, n:] = xn
        ss = float(np.dot(vn, vn) + np.dot(xn, xn))
        if not np.isfinite(ss) or ss > limit2:
            return k, True
        theta[:] = out_states[k]
        xs = theta[n:].reshape(r, dim)
        fx = values(xs)
        better = fx < pr_f
        if better.any():
            pr_f[better] = fx[better]
            pr[better] = xs[better]
        for i in range(r):
            row = nbr[i]
            jb = row[int(np.argmin(pr_f[row]))]
            if pr_f[jb] < pg_f[i]:
                pg_f[i] = pr_f[jb]
                pg[i] = pr[jb]
        out_pr[k] = pr.reshape(-1)
        out_pg[k] = pg.reshape(-1)
    return steps, False
