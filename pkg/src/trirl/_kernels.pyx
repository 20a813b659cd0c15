# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: soft Bellman sweeps and rollout sampling.

Both functions mirror ``_kernels_py`` exactly; the Python versions are the
reference and the tests compare the two backends.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()


def soft_bellman_solve(
    const cnp.int64_t[::1] row_ptr,
    const cnp.int64_t[::1] cols,
    const double[::1] probs,
    const double[:, ::1] reward,
    double gamma,
    double[::1] v0,
    double tol,
    long max_iter,
):
    """Iterate V <- logsumexp_a(r + gamma * P V) until the scaled residual is below tol.

    Returns (V, sweeps, scaled_residual). Transitions are stored row-wise in
    CSR form with one row per (s, a) pair.
    """
    cdef Py_ssize_t n_s = reward.shape[0]
    cdef Py_ssize_t n_a = reward.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.array(v0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w_arr = np.empty(n_s, dtype=np.float64)
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    cdef double[::1] q = np.empty(n_a, dtype=np.float64)
    cdef double[::1] tmp
    cdef Py_ssize_t s, a, k, row
    cdef double acc, qmax, total, res, vmax, scale
    cdef long it = 0

    res = 0.0
    while it < max_iter:
        res = 0.0
        vmax = 0.0
        for s in range(n_s):
            qmax = -1e308
            for a in range(n_a):
                row = s * n_a + a
                acc = 0.0
                for k in range(row_ptr[row], row_ptr[row + 1]):
                    acc += probs[k] * v[cols[k]]
                q[a] = reward[s, a] + gamma * acc
                if q[a] > qmax:
                    qmax = q[a]
            total = 0.0
            for a in range(n_a):
                total += exp(q[a] - qmax)
            w[s] = qmax + log(total)
            if fabs(w[s] - v[s]) > res:
                res = fabs(w[s] - v[s])
            if fabs(w[s]) > vmax:
                vmax = fabs(w[s])
        tmp = v
        v = w
        w = tmp
        it += 1
        scale = vmax if vmax > 1.0 else 1.0
        if res <= tol * scale:
            return np.asarray(v).copy(), it, res / scale
    scale = 1.0
    for s in range(n_s):
        if fabs(v[s]) > scale:
            scale = fabs(v[s])
    return np.asarray(v).copy(), it, res / scale


cdef inline Py_ssize_t _pick(const double[::1] cdf, Py_ssize_t start, Py_ssize_t stop, double u) nogil:
    # count of cdf entries <= u; equals the index of the first entry > u
    cdef Py_ssize_t k
    cdef Py_ssize_t n = 0
    for k in range(start, stop):
        if cdf[k] <= u:
            n += 1
    return n


def sample_rollouts(
    const double[::1] pi_cdf,
    const cnp.int64_t[::1] row_ptr,
    const cnp.int64_t[::1] cols,
    const double[::1] p_cdf,
    const double[::1] mu_cdf,
    Py_ssize_t n_actions,
    double gamma,
    const double[:, :, ::1] u,
):
    """Roll out n trajectories of fixed length with geometric resets to mu0.

    u has shape (n, horizon + 1, 4): column 0 picks the action, 1 the next
    state, 2 decides a reset and 3 picks the reset state. u[:, 0, 3] picks
    the start state.
    """
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t horizon = u.shape[1] - 1
    cdef Py_ssize_t n_s = mu_cdf.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] st_arr = np.empty((n, horizon), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] ac_arr = np.empty((n, horizon), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] nx_arr = np.empty((n, horizon), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] st = st_arr
    cdef cnp.int64_t[:, ::1] ac = ac_arr
    cdef cnp.int64_t[:, ::1] nx = nx_arr
    cdef Py_ssize_t i, t, s, a, row, k
    with nogil:
        for i in range(n):
            s = _pick(mu_cdf, 0, n_s, u[i, 0, 3])
            for t in range(horizon):
                a = _pick(pi_cdf, s * n_actions, (s + 1) * n_actions, u[i, t + 1, 0])
                row = s * n_actions + a
                k = _pick(p_cdf, row_ptr[row], row_ptr[row + 1], u[i, t + 1, 1])
                st[i, t] = s
                ac[i, t] = a
                nx[i, t] = cols[row_ptr[row] + k]
                if u[i, t + 1, 2] < 1.0 - gamma:
                    s = _pick(mu_cdf, 0, n_s, u[i, t + 1, 3])
                else:
                    s = nx[i, t]
    return st_arr, ac_arr, nx_arr
