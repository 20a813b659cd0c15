"""Trust-region projection for Gaussian policies (mean and covariance parts).

KL components are those of KL(new || old):
    d_mean = 1/2 (mu_new - mu_old)^T Sigma_old^-1 (mu_new - mu_old)
    d_cov  = 1/2 (log|Sigma_old| / |Sigma_new| + tr(Sigma_old^-1 Sigma_new) - d)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

ZETA_MU = 0.002
ZETA_SIGMA = 0.001


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        c = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if m.ndim != 1 or c.shape != (m.size, m.size):
            raise ValueError("mean must be (d,) and cov (d, d)")
        if np.abs(c - c.T).max() > 1e-12 * max(1.0, np.abs(c).max()):
            raise ValueError("cov must be symmetric")
        if np.linalg.eigvalsh(c).min() <= 0:
            raise ValueError("cov must be positive definite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    projected: GaussianParams
    eta_mu: float
    eta_sigma: float
    d_mean_after: float
    d_cov_after: float


def _spd(m) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] != m.shape[1] or np.abs(m - m.T).max() > 1e-12 * max(1.0, np.abs(m).max()):
        raise ValueError("matrix must be square and symmetric")
    try:
        linalg.cholesky(m, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("matrix must be positive definite") from exc
    return m


def mean_part(mu_new, mu_old, sigma_old) -> float:
    diff = np.atleast_1d(np.asarray(mu_new, float) - np.asarray(mu_old, float))
    c = linalg.cho_factor(_spd(sigma_old), lower=True)
    return 0.5 * float(diff @ linalg.cho_solve(c, diff))


def cov_part(sigma_new, sigma_old) -> float:
    s_new, s_old = _spd(sigma_new), _spd(sigma_old)
    d = s_new.shape[0]
    c = linalg.cho_factor(s_old, lower=True)
    _, logdet_new = np.linalg.slogdet(s_new)
    logdet_old = 2.0 * np.log(np.diag(c[0])).sum()
    tr = np.trace(linalg.cho_solve(c, s_new))
    return 0.5 * float(logdet_old - logdet_new + tr - d)


def kl_decompose(p_new: GaussianParams, p_old: GaussianParams) -> tuple[float, float]:
    if p_new.dim != p_old.dim:
        raise ValueError("dimension mismatch")
    return mean_part(p_new.mean, p_old.mean, p_old.cov), cov_part(p_new.cov, p_old.cov)


def project_mean(mu_pred, mu_old, sigma_old, zeta_mu: float = ZETA_MU) -> tuple[np.ndarray, float]:
    """Interpolate towards mu_old until the mean part equals zeta_mu.

    The interpolated mean (mu_pred + eta mu_old) / (1 + eta) has mean part
    d / (1 + eta)^2 where d is the mean part of mu_pred, so
    eta = sqrt(d / zeta_mu) - 1.
    """
    if not zeta_mu > 0:
        raise ValueError("zeta_mu must be positive")
    mu_pred = np.atleast_1d(np.asarray(mu_pred, dtype=np.float64))
    mu_old = np.atleast_1d(np.asarray(mu_old, dtype=np.float64))
    d = mean_part(mu_pred, mu_old, sigma_old)
    if d <= zeta_mu:
        return mu_pred, 0.0
    eta = math.sqrt(d / zeta_mu) - 1.0
    return (mu_pred + eta * mu_old) / (1.0 + eta), eta


def _whitened_eigs(sigma_pred, sigma_old) -> np.ndarray:
    # eigenvalues m_i of Sigma_old^{1/2} Lambda_pred Sigma_old^{1/2}; along the
    # precision interpolation they move linearly from m_i to 1
    return linalg.eigh(linalg.inv(_spd(sigma_pred)), linalg.inv(_spd(sigma_old)), eigvals_only=True)


def _d_cov_eta(m: np.ndarray, eta: float) -> float:
    lam = (eta + m) / (eta + 1.0)
    return 0.5 * float(np.sum(np.log(lam) + 1.0 / lam - 1.0))


def interpolate_cov(sigma_pred, sigma_old, eta: float) -> np.ndarray:
    """((eta Lambda_old + Lambda_pred) / (eta + 1))^-1."""
    lam = (eta * linalg.inv(sigma_old) + linalg.inv(sigma_pred)) / (eta + 1.0)
    out = linalg.inv(lam)
    return 0.5 * (out + out.T)


def project_cov(sigma_pred, sigma_old, zeta_sigma: float = ZETA_SIGMA, tol: float = 1e-13) -> tuple[np.ndarray, float]:
    """Precision interpolation towards Sigma_old with the cov part at zeta_sigma.

    The multiplier is found by bracketing and bisection on the cov part,
    evaluated in the joint eigenbasis where it is a sum of scalar terms. The
    bisection ends on the feasible side so a second projection is a no-op.
    """
    if not zeta_sigma > 0:
        raise ValueError("zeta_sigma must be positive")
    sigma_pred, sigma_old = _spd(sigma_pred), _spd(sigma_old)
    if cov_part(sigma_pred, sigma_old) <= zeta_sigma:
        return sigma_pred, 0.0
    m = _whitened_eigs(sigma_pred, sigma_old)
    if (m <= 0).any() or not np.isfinite(m).all():
        raise ValueError("numerically indefinite covariance inputs")
    lo, hi = 0.0, 1.0
    while _d_cov_eta(m, hi) > zeta_sigma:
        lo, hi = hi, hi * 4.0
        if hi > 1e15:
            raise ValueError("covariance projection bracket failed")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = _d_cov_eta(m, mid)
        if val > zeta_sigma:
            lo = mid
        else:
            hi = mid
            if zeta_sigma - val <= tol * zeta_sigma:
                break
    eta = hi
    sigma = interpolate_cov(sigma_pred, sigma_old, eta)
    # guard the matrix-level value against eigen-solver rounding
    for _ in range(60):
        if cov_part(sigma, sigma_old) <= zeta_sigma:
            break
        eta = eta * (1.0 + 1e-12) + 1e-15
        sigma = interpolate_cov(sigma_pred, sigma_old, eta)
    return sigma, eta


def project(p_pred: GaussianParams, p_old: GaussianParams, zeta_mu: float = ZETA_MU,
            zeta_sigma: float = ZETA_SIGMA) -> ProjectionResult:
    mu, eta_mu = project_mean(p_pred.mean, p_old.mean, p_old.cov, zeta_mu)
    cov, eta_sigma = project_cov(p_pred.cov, p_old.cov, zeta_sigma)
    if eta_mu == 0.0 and eta_sigma == 0.0:
        out = p_pred
    else:
        out = GaussianParams(mu, cov)
    dm, dc = kl_decompose(out, p_old)
    return ProjectionResult(out, eta_mu, eta_sigma, dm, dc)


def aggregate_eta(etas_mu, eta_sigma: float) -> float:
    """max over the batch of mean multipliers and the covariance multiplier."""
    etas = list(etas_mu)
    if not etas:
        raise ValueError("etas_mu must be non-empty")
    return float(max(max(etas), eta_sigma))


def random_spd(rng: np.random.Generator, d: int, spread: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d))
    q, _ = np.linalg.qr(a)
    ev = np.exp(rng.uniform(-spread, spread, size=d))
    m = (q * ev) @ q.T
    return 0.5 * (m + m.T)


def random_instance(seed: int, d: int) -> tuple[GaussianParams, GaussianParams]:
    """(prediction, old) pair with moderate KL so both constraints often bind."""
    rng = np.random.default_rng(seed)
    old = GaussianParams(rng.normal(size=d), random_spd(rng, d))
    scale = 10.0 ** rng.uniform(-2.5, -0.5)
    pred_cov = random_spd(rng, d, 0.2) * scale + old.cov * (1.0 - scale)
    pred_cov = 0.5 * (pred_cov + pred_cov.T)
    pred = GaussianParams(old.mean + rng.normal(size=d) * math.sqrt(scale), pred_cov)
    return pred, old
