"""Soft value iteration and the trust-region-optimal policy solve."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from trirl._backend import kernels
from trirl.mdp import TabularMdp, TabularPolicy, boltzmann_policy, expected_policy_kl, state_occupancy

log = logging.getLogger(__name__)

VI_TOL = 1e-10
VI_MAX_ITER = 10**6
ETA_MAX = 1e12


class SolverError(RuntimeError):
    """Raised when an inner solve does not converge or a search fails."""


@dataclass(frozen=True, eq=False)
class SoftSolution:
    q: np.ndarray
    v: np.ndarray
    policy: TabularPolicy
    iterations: int
    residual: float
    polish_steps: int = 0


def soft_q(mdp: TabularMdp, reward: np.ndarray, v: np.ndarray) -> np.ndarray:
    return reward + mdp.gamma * (mdp.transition @ v)


def soft_value_iteration(
    mdp: TabularMdp,
    reward: np.ndarray,
    tol: float = VI_TOL,
    *,
    v_init: np.ndarray | None = None,
    max_iter: int = VI_MAX_ITER,
    polish: int = 0,
) -> SoftSolution:
    """Fixed point of V(s) = log sum_a exp(r(s,a) + gamma E[V(s')]).

    Convergence is declared once the sup-norm Bellman residual drops below
    ``tol * max(1, |V|_inf)``; the reported residual is that scaled value.
    Values grow like |r| / (1 - gamma), so an absolute threshold would sit
    below double precision for large rewards.

    ``polish`` adds that many Newton steps (exact soft policy evaluation by a
    linear solve) after convergence, bringing V to machine precision.
    """
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"reward shape {reward.shape} does not match the MDP")
    if not np.isfinite(reward).all():
        raise ValueError("reward entries must be finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    v0 = np.zeros(mdp.n_states) if v_init is None else np.asarray(v_init, dtype=np.float64)
    row_ptr, cols, probs = mdp.csr
    v, sweeps, res = kernels.soft_bellman_solve(
        row_ptr, cols, probs, np.ascontiguousarray(reward), mdp.gamma, np.ascontiguousarray(v0), tol, max_iter
    )
    if not res <= tol:
        raise SolverError(f"soft value iteration did not converge in {sweeps} sweeps (residual {res:.3e})")
    sol = _finish(mdp, reward, v, int(sweeps), float(res))
    for _ in range(polish):
        sol = polish_step(mdp, reward, sol)
    return sol


def _finish(mdp, reward, v, sweeps, res, polish_steps=0) -> SoftSolution:
    q = soft_q(mdp, reward, v)
    pol = boltzmann_policy(q)
    v = np.max(q, axis=1) + np.log(np.exp(q - np.max(q, axis=1, keepdims=True)).sum(axis=1))
    return SoftSolution(q, v, pol, sweeps, res, polish_steps)


def soft_policy_value(mdp: TabularMdp, reward: np.ndarray, policy: TabularPolicy) -> np.ndarray:
    """V^pi solving V = sum_a pi (r - log pi) + gamma P_pi V."""
    p = policy.probs
    c = (p * (reward - np.where(p > 0, policy.log_probs, 0.0))).sum(axis=1)
    ppi = np.einsum("sa,sat->st", p, mdp.transition)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * ppi, c)


def polish_step(mdp: TabularMdp, reward: np.ndarray, sol: SoftSolution) -> SoftSolution:
    """One soft policy-iteration step from a converged solution."""
    v = soft_policy_value(mdp, reward, sol.policy)
    q = soft_q(mdp, reward, v)
    w = np.max(q, axis=1) + np.log(np.exp(q - np.max(q, axis=1, keepdims=True)).sum(axis=1))
    res = float(np.abs(w - v).max()) / max(1.0, float(np.abs(w).max()))
    return _finish(mdp, reward, v, sol.iterations, min(res, sol.residual), sol.polish_steps + 1)


def lemma1_transform(reward: np.ndarray, pi_prev: TabularPolicy, eta: float) -> np.ndarray:
    """r / (1 + eta) + eta / (1 + eta) * log pi_prev."""
    if not eta >= 0:
        raise ValueError("eta must be nonnegative")
    if eta == 0:
        return np.array(reward, dtype=np.float64, copy=True)
    if not np.isfinite(pi_prev.log_probs).all():
        raise ValueError("pi_prev must be strictly positive")
    return reward / (1.0 + eta) + (eta / (1.0 + eta)) * pi_prev.log_probs


@dataclass(frozen=True, eq=False)
class TrSolveResult:
    policy: TabularPolicy
    eta: float
    expected_kl: float
    active: bool
    solution: SoftSolution
    sweeps: int = 0
    evaluations: int = 0
    trace: tuple = field(default=())

    @property
    def monotone_violation(self) -> float:
        """Largest increase of expected KL between consecutive evaluated etas."""
        pts = sorted(self.trace)
        if len(pts) < 2:
            return 0.0
        kls = np.array([k for _, k in pts])
        return float(max(0.0, np.diff(kls).max()))


def solve_trust_region(
    mdp: TabularMdp,
    reward: np.ndarray,
    pi_prev: TabularPolicy,
    zeta: float,
    kl_tol: float | None = None,
    *,
    tol: float = VI_TOL,
    v_init: np.ndarray | None = None,
    eta_hint: float | None = None,
    max_evals: int = 200,
    polish: int = 0,
) -> TrSolveResult:
    """MaxEnt policy maximizing reward + entropy s.t. E_rho[KL(pi || pi_prev)] <= zeta.

    The multiplier eta is the smallest value with expected KL in
    [zeta - kl_tol, zeta]; it is bracketed geometrically and then refined by
    bisection on x = log(1 + eta), where each trial point is the secant
    estimate of log KL against x when that falls inside the bracket and the
    midpoint otherwise (or after two updates of the same endpoint).

    ``v_init`` warm-starts the unconstrained solve. Trial etas start from the
    nearest evaluated value function rescaled by (1 + eta): the soft value of
    the reward log pi_prev is identically zero, so V shrinks like 1 / (1 + eta).
    """
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    if kl_tol is None:
        kl_tol = 0.05 * zeta
    if not 0 < kl_tol <= zeta:
        raise ValueError("kl_tol must lie in (0, zeta]")
    if not np.isfinite(pi_prev.log_probs).all():
        raise ValueError("pi_prev must be strictly positive")

    sweeps = 0
    trace: list[tuple[float, float]] = []
    sols: dict[float, SoftSolution] = {}

    def evaluate(eta: float) -> float:
        nonlocal sweeps
        if eta == 0:
            start = v_init
        else:
            near = min(sols, key=lambda e: abs(math.log1p(e) - math.log1p(eta)))
            # V scales like 1 / (1 + eta) towards the fixed point of log pi_prev
            start = sols[near].v * (1.0 + near) / (1.0 + eta)
        sol = soft_value_iteration(mdp, lemma1_transform(reward, pi_prev, eta), tol, v_init=start)
        sweeps += sol.iterations
        k = expected_policy_kl(mdp, sol.policy, pi_prev)
        sols[eta] = sol
        trace.append((eta, k))
        return k

    def result(eta: float, k: float) -> TrSolveResult:
        sol = sols[eta]
        if polish:
            r_eta = lemma1_transform(reward, pi_prev, eta)
            for _ in range(polish):
                sol = polish_step(mdp, r_eta, sol)
            k = expected_policy_kl(mdp, sol.policy, pi_prev)
        return TrSolveResult(sol.policy, eta, k, eta > 0, sol, sweeps, len(trace), tuple(trace))

    k0 = evaluate(0.0)
    if k0 <= zeta:
        return result(0.0, k0)

    # near the previous policy KL scales like (1 + eta)^-2
    guess = max(math.sqrt(k0 / zeta) - 1.0, 1e-6)
    if eta_hint is not None and eta_hint > 0:
        guess = eta_hint
    lo, k_lo = 0.0, k0
    hi = guess
    k_hi = evaluate(hi)
    while k_hi > zeta:
        lo, k_lo = hi, k_hi
        hi = hi * 4.0 + 1.0
        if hi > ETA_MAX:
            raise SolverError(f"no eta <= {ETA_MAX:g} satisfies the trust region (kl {k_hi:.3e} > {zeta:.3e})")
        k_hi = evaluate(hi)
    if k_hi >= zeta - kl_tol:
        return result(hi, k_hi)

    target = math.log(zeta - 0.5 * kl_tol)
    last_side, repeats = 0, 0
    for _ in range(max_evals):
        x_lo, x_hi = math.log1p(lo), math.log1p(hi)
        y_lo, y_hi = math.log(k_lo) - target, math.log(max(k_hi, 1e-300)) - target
        x = 0.5 * (x_lo + x_hi)
        if repeats < 2 and y_hi != y_lo:
            # secant step; log KL is close to linear in log(1 + eta)
            xs = x_lo - y_lo * (x_hi - x_lo) / (y_hi - y_lo)
            if x_lo < xs < x_hi:
                x = xs
        mid = math.expm1(x)
        k_mid = evaluate(mid)
        side = 1 if k_mid > zeta else -1
        repeats = repeats + 1 if side == last_side else 0
        last_side = side
        if side == 1:
            lo, k_lo = mid, k_mid
        else:
            hi, k_hi = mid, k_mid
            if k_hi >= zeta - kl_tol:
                return result(hi, k_hi)
        if hi - lo <= 1e-14 * max(1.0, hi):
            log.warning("trust-region search stalled at eta=%.6g (kl %.6g)", hi, k_hi)
            return result(hi, k_hi)
    raise SolverError("trust-region search exceeded its evaluation budget")


def penalized_objective(mdp: TabularMdp, reward: np.ndarray, policy: TabularPolicy, pi_prev: TabularPolicy,
                        eta: float) -> float:
    """E_rho[r + H(pi)] - eta * E_rho[KL(pi || pi_prev)] under the policy's own occupancy."""
    d = state_occupancy(mdp, policy)
    p = policy.probs
    lp = np.where(p > 0, policy.log_probs, 0.0)
    per_state = (p * (reward - lp - eta * (lp - np.where(p > 0, pi_prev.log_probs, 0.0)))).sum(axis=1)
    return float(d @ per_state)
