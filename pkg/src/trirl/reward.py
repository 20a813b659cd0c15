"""Function-space reward updates, the step-size correction and the IRL dual.

The dual is written in minimization form,

    G(r) = (1 - gamma) E_mu0[V_r(s0)] + beta * logsumexp(log rho_E - r / beta),

with V_r the soft value of r. The (1 - gamma) factor matches the normalized
occupancies used throughout, so the gradient is exactly rho_{pi_r} - rho_hat
with rho_hat proportional to rho_E * exp(-r / beta), and G is invariant to
constant shifts of r. Reward updates move along -(r - beta D), which lowers
G; drivers report -G so that progress shows as a non-decreasing dual value.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import logsumexp

from trirl.mdp import Occupancy, TabularMdp, compute_occupancy
from trirl.solver import soft_value_iteration

log = logging.getLogger(__name__)

FLOOR = 1e-12


def _rho(x) -> np.ndarray:
    return x.rho if isinstance(x, Occupancy) else np.asarray(x, dtype=np.float64)


def floored_log(rho, floor: float = FLOOR) -> np.ndarray:
    return np.log(np.maximum(_rho(rho), floor))


def log_density_ratio_exact(rho_e, rho_pi, floor: float = FLOOR) -> np.ndarray:
    """log(max(rho_E, floor) / max(rho_pi, floor)) elementwise."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    e, p = _rho(rho_e), _rho(rho_pi)
    clamped = int(((e < floor) | (p < floor)).sum())
    if clamped:
        log.debug("log-ratio floor active on %d cells", clamped)
    return floored_log(e, floor) - floored_log(p, floor)


def reward_update(r: np.ndarray, logratio: np.ndarray, epsilon: float, beta: float) -> np.ndarray:
    """(1 - epsilon) r + epsilon beta logratio."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if epsilon == 1:
        return beta * np.asarray(logratio, dtype=np.float64)
    return (1.0 - epsilon) * r + epsilon * beta * np.asarray(logratio)


def corrected_step(epsilon: float, eta: float) -> float:
    if not eta >= 0:
        raise ValueError("eta must be nonnegative")
    return epsilon / (1.0 + eta)


def correct_reward(r_prev: np.ndarray, logratio: np.ndarray, epsilon: float, eta: float,
                   beta: float) -> tuple[np.ndarray, float]:
    """Reward update with the shrunk step epsilon / (1 + eta); returns (reward, step)."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    eps_tr = corrected_step(epsilon, eta)
    if eps_tr == 0.0:
        return np.array(r_prev, dtype=np.float64, copy=True), 0.0
    return reward_update(r_prev, logratio, eps_tr, beta), eps_tr


def rho_hat(r: np.ndarray, rho_e, beta: float, floor: float = FLOOR) -> np.ndarray:
    """Normalized exp(log rho_E - r / beta)."""
    z = floored_log(rho_e, floor) - np.asarray(r) / beta
    return np.exp(z - logsumexp(z))


def dual_from_value(mdp: TabularMdp, v: np.ndarray, r: np.ndarray, rho_e, beta: float,
                    floor: float = FLOOR) -> float:
    """G(r) given the soft value V_r."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = floored_log(rho_e, floor) - np.asarray(r) / beta
    return float((1.0 - mdp.gamma) * (mdp.initial_dist @ v) + beta * logsumexp(z))


def dual_objective(mdp: TabularMdp, r: np.ndarray, rho_e, beta: float, floor: float = FLOOR,
                   tol: float = 1e-10) -> float:
    sol = soft_value_iteration(mdp, r, tol)
    return dual_from_value(mdp, sol.v, r, rho_e, beta, floor)


def dual_gradient(mdp: TabularMdp, r: np.ndarray, rho_e, beta: float, floor: float = FLOOR,
                  tol: float = 1e-10) -> np.ndarray:
    """rho_{pi_r} - rho_hat, the gradient of G with one-hot features."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    sol = soft_value_iteration(mdp, r, tol)
    return compute_occupancy(mdp, sol.policy).rho - rho_hat(r, rho_e, beta, floor)


def alignment_check(delta: np.ndarray, grad: np.ndarray, rho_pi, rho_hat_, beta: float,
                    floor: float = FLOOR) -> tuple[float, float]:
    """(<delta / beta, grad>, KL(rho_pi || rho_hat) + KL(rho_hat || rho_pi)).

    With delta = r - beta log(rho_E / rho_pi) and grad = rho_pi - rho_hat the
    two agree exactly: delta / beta equals log rho_pi - log rho_hat up to a
    constant, and grad sums to zero. rho_pi is floored exactly as in the log
    ratio so that unreachable cells contribute consistently.
    """
    p, h = _rho(rho_pi), _rho(rho_hat_)
    lhs = float(np.sum(np.asarray(delta) / beta * np.asarray(grad)))
    # rho_hat is strictly positive; only guard against underflow
    diff = floored_log(p, floor) - np.log(np.maximum(h, 1e-300))
    rhs = float(np.sum(p * diff) - np.sum(h * diff))
    return lhs, rhs


def reverse_kl(rho_pi, rho_e, floor: float = FLOOR) -> float:
    """KL(rho_pi || rho_E) with both densities floored inside the log."""
    p = _rho(rho_pi)
    val = float(np.sum(np.where(p > 0, p * (floored_log(p, floor) - floored_log(rho_e, floor)), 0.0)))
    return max(val, 0.0)


def shaped_canonical(mdp: TabularMdp, r: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """r + gamma P V - V for the soft value of r: the log policy, a canonical
    potential-shaped representative of the reward's equivalence class."""
    sol = soft_value_iteration(mdp, r, tol)
    return sol.policy.log_probs.copy()
