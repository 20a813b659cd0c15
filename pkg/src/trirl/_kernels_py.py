"""Pure numpy reference versions of the compiled kernels."""

import numpy as np
from scipy import sparse


def soft_bellman_solve(row_ptr, cols, probs, reward, gamma, v0, tol, max_iter):
    n_s, n_a = reward.shape
    p = sparse.csr_matrix((probs, cols, row_ptr), shape=(n_s * n_a, n_s))
    v = np.array(v0, dtype=np.float64, copy=True)
    res = 0.0
    for it in range(1, max_iter + 1):
        q = reward + gamma * (p @ v).reshape(n_s, n_a)
        qmax = q.max(axis=1)
        w = qmax + np.log(np.exp(q - qmax[:, None]).sum(axis=1))
        res = float(np.abs(w - v).max())
        v = w
        scale = max(1.0, float(np.abs(v).max()))
        if res <= tol * scale:
            return v, it, res / scale
    return v, max_iter, res / max(1.0, float(np.abs(v).max()))


def _pick(cdf_rows, u):
    # count of cdf entries <= u; same rule as the compiled kernel
    return (cdf_rows <= u[:, None]).sum(axis=1)


def sample_rollouts(pi_cdf, row_ptr, cols, p_cdf, mu_cdf, n_actions, gamma, u):
    n, h1, _ = u.shape
    horizon = h1 - 1
    pi_tab = pi_cdf.reshape(-1, n_actions)
    # dense per-row cdf tables padded with +inf
    n_rows = len(row_ptr) - 1
    width = int(np.diff(row_ptr).max())
    p_tab = np.full((n_rows, width), np.inf)
    c_tab = np.zeros((n_rows, width), dtype=np.int64)
    for row in range(n_rows):
        lo, hi = row_ptr[row], row_ptr[row + 1]
        p_tab[row, : hi - lo] = p_cdf[lo:hi]
        c_tab[row, : hi - lo] = cols[lo:hi]
    mu_tab = np.broadcast_to(mu_cdf, (n, len(mu_cdf)))

    st = np.empty((n, horizon), dtype=np.int64)
    ac = np.empty((n, horizon), dtype=np.int64)
    nx = np.empty((n, horizon), dtype=np.int64)
    s = _pick(mu_tab, u[:, 0, 3])
    for t in range(horizon):
        ut = u[:, t + 1]
        a = _pick(pi_tab[s], ut[:, 0])
        row = s * n_actions + a
        k = _pick(p_tab[row], ut[:, 1])
        st[:, t] = s
        ac[:, t] = a
        nx[:, t] = c_tab[row, k]
        reset = ut[:, 2] < 1.0 - gamma
        s = np.where(reset, _pick(mu_tab, ut[:, 3]), nx[:, t])
    return st, ac, nx
