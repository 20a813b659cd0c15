"""Outer loops: TRIRL, the MCE-IRL baseline, the scheduled-eta variant,
ablations and the frozen-reward transfer protocol.

All loops track the minimization-form dual G (see ``trirl.reward``) and record
its negation. With ``adaptive_radius`` (the default) every iteration starts
from the full step and backtracks while G would rise: TRIRL shrinks its
trust-region radius, MCE-IRL shrinks epsilon and the scheduled-eta variant
grows 1 + eta, all by ``radius_shrink``. TRIRL additionally rejects steps that
raise the reverse KL when ``kl_guard`` is set. Runs stop at reverse KL below
``tol`` or at dual stationarity (L1 norm of the gradient below ``grad_tol``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import log_expit

from trirl._backend import kernels
from trirl.density import (
    DiscBuffer,
    RatioProvider,
    buffer_corrected_reward,
    buffer_intermediate_reward,
    buffer_push,
    recompute_etas_retrospective,
    sample_trajectories,
    train_logistic_discriminator,
)
from trirl.mdp import (
    Environment,
    Occupancy,
    TabularMdp,
    TabularPolicy,
    boltzmann_policy,
    compute_occupancy,
    expected_policy_kl,
)
from trirl.reward import (
    FLOOR,
    alignment_check,
    dual_from_value,
    log_density_ratio_exact,
    reverse_kl,
    reward_update,
    rho_hat,
)
from trirl.solver import SoftSolution, SolverError, lemma1_transform, soft_value_iteration, solve_trust_region

log = logging.getLogger(__name__)

VARIANTS = ("max_eta", "tr_loss", "retrospective_eta")
MODES = ("exact", "sampled")
SCHEDULES = ("constant", "linear", "exponential")
ABLATIONS = ("uncorrected_buffer", "no_buffer_local", "gail_like")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the key."""


@dataclass(frozen=True)
class ExperimentConfig:
    epsilon: float = 0.6
    beta: float = 100.0
    zeta: float = 1e-3
    buffer_k: int = 100
    mode: str = "exact"
    variant: str = "max_eta"
    eta_init: float = 80.0
    eta_schedule: str = "constant"
    eta_decay: float = 0.99
    max_iters: int = 500
    tol: float = 1e-6
    grad_tol: float = 1e-5
    vi_tol: float = 1e-10
    kl_tol: float = 0.05
    floor: float = FLOOR
    seed: int = 0
    fit_noise: float = 0.0
    adaptive_radius: bool = True
    kl_guard: bool = True
    eta_warm_start: bool = True
    radius_shrink: float = 0.25
    min_radius: float = 1e-12
    n_samples: int = 100_000
    horizon: int = 1000
    disc_steps: int = 5000
    disc_lr: float = 2.0
    gail_sweeps: int = 10
    dual_slack: float = 1e-9
    record_time: bool = True

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"config key {key!r}: {why}")

        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("float",) and (isinstance(v, bool) or not isinstance(v, (int, float))):
                bad(f.name, f"expected a number, got {v!r}")
            if f.type == "int" and (isinstance(v, bool) or not isinstance(v, int)):
                bad(f.name, f"expected an integer, got {v!r}")
            if f.type == "bool" and not isinstance(v, bool):
                bad(f.name, f"expected true/false, got {v!r}")
        if not 0 < self.epsilon <= 1:
            bad("epsilon", "must lie in (0, 1]")
        for key in ("beta", "zeta", "tol", "grad_tol", "vi_tol", "floor", "disc_lr"):
            if not getattr(self, key) > 0:
                bad(key, "must be positive")
        if not 0 < self.kl_tol <= 1:
            bad("kl_tol", "relative KL tolerance must lie in (0, 1]")
        for key in ("buffer_k", "max_iters", "n_samples", "horizon", "disc_steps", "gail_sweeps"):
            if getattr(self, key) < 1:
                bad(key, "must be at least 1")
        if self.mode not in MODES:
            bad("mode", f"must be one of {MODES}")
        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {VARIANTS}")
        if self.eta_schedule not in SCHEDULES:
            bad("eta_schedule", f"must be one of {SCHEDULES}")
        if self.eta_init < 0:
            bad("eta_init", "must be nonnegative")
        if self.fit_noise < 0:
            bad("fit_noise", "must be nonnegative")
        if not 0 < self.radius_shrink < 1:
            bad("radius_shrink", "must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in d.items():
            if key not in names:
                raise ConfigError(f"config key {key!r} not recognized")
            if names[key].type == "float" and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            kw[key] = val
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def eta_at(self, i: int) -> float:
        """Scheduled eta for iteration i >= 1 (scheduled-eta variant)."""
        if self.eta_schedule == "constant":
            return self.eta_init
        if self.eta_schedule == "linear":
            return self.eta_init * max(0.0, 1.0 - (i - 1) / self.max_iters)
        return self.eta_init * self.eta_decay ** (i - 1)


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    dual_value: float
    reverse_kl: float
    eta: float
    epsilon_tr: float
    expected_kl: float
    alignment_lhs: float
    alignment_rhs: float
    theorem1_residual: float
    wall_time: float
    sweeps: int = 0
    rejected: int = 0
    grad_norm: float = math.inf


@dataclass(eq=False)
class RunResult:
    records: list
    final_reward: np.ndarray
    final_policy: TabularPolicy
    converged: bool
    inner_sweeps: int = 0
    linear_solves: int = 0
    stop_reason: str = ""
    dual_violations: int = 0
    kl_violations: int = 0
    kind: str = "trirl"
    final_occupancy: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        last = self.records[-1]
        return {
            "kind": self.kind,
            "iterations": last.iter,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "final_reverse_kl": last.reverse_kl,
            "final_dual": last.dual_value,
            "inner_sweeps": self.inner_sweeps,
            "linear_solves": self.linear_solves,
            "dual_violations": self.dual_violations,
            "kl_violations": self.kl_violations,
            "max_theorem1_residual": max(r.theorem1_residual for r in self.records),
            "max_alignment_gap": max(abs(r.alignment_lhs - r.alignment_rhs) for r in self.records),
        }


# ------------------------------------------------------------------ helpers

def expert_for(env: Environment, seed: int = 0, vi_tol: float = 1e-10) -> tuple[TabularPolicy, Occupancy]:
    """Expert policy and its exact occupancy. Gridworld experts are soft-optimal
    for the environment's goal reward with seed-dependent noise."""
    if env.expert_policy is not None:
        pol = TabularPolicy(env.expert_policy)
    else:
        pol = soft_value_iteration(env.mdp, env.expert_reward(seed), vi_tol, polish=2).policy
    return pol, compute_occupancy(env.mdp, pol)


def _occ(x) -> np.ndarray:
    return x.rho if isinstance(x, Occupancy) else np.asarray(x, dtype=np.float64)


def count_violations(values, slack: float, increasing: bool) -> int:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0
    d = np.diff(v)
    return int((d < -slack).sum() if increasing else (d > slack).sum())


class _Tracker:
    """Shared record keeping: diagnostics use an independent cold solve."""

    def __init__(self, mdp, rho_e, cfg: ExperimentConfig, kind: str):
        self.mdp, self.rho_e, self.cfg, self.kind = mdp, _occ(rho_e), cfg, kind
        self.records: list[IterationRecord] = []
        self.sweeps = 0
        self.linear = 0
        self.t0 = time.perf_counter()

    def diag(self, r: np.ndarray) -> SoftSolution:
        return soft_value_iteration(self.mdp, r, self.cfg.vi_tol, polish=2)

    def record(self, i, r, pi, eta, eps_tr, ekl, rejected=0) -> IterationRecord:
        cfg = self.cfg
        sol = self.diag(r)
        rho_r = compute_occupancy(self.mdp, sol.policy).rho
        rho_pi = compute_occupancy(self.mdp, pi).rho
        g = dual_from_value(self.mdp, sol.v, r, self.rho_e, cfg.beta, cfg.floor)
        h = rho_hat(r, self.rho_e, cfg.beta, cfg.floor)
        delta = r - cfg.beta * log_density_ratio_exact(self.rho_e, rho_r, cfg.floor)
        lhs, rhs = alignment_check(delta, rho_r - h, rho_r, h, cfg.beta, cfg.floor)
        now = time.perf_counter()
        wall = (now - self.t0) * 1e3 if cfg.record_time else 0.0
        self.t0 = now
        rec = IterationRecord(
            i, -g, reverse_kl(rho_pi, self.rho_e, cfg.floor), float(eta), float(eps_tr), float(ekl), lhs, rhs,
            float(np.abs(pi.probs - sol.policy.probs).max()), wall, self.sweeps, rejected,
            float(np.abs(rho_r - h).sum()),
        )
        self.records.append(rec)
        return rec

    def result(self, r, pi, converged, reason, extra=None) -> RunResult:
        recs = self.records
        dv = count_violations([x.dual_value for x in recs], self.cfg.dual_slack, increasing=True)
        kv = count_violations([x.reverse_kl for x in recs[1:]], 1e-9, increasing=False)
        if dv and self.kind in ("trirl", "tr_loss", "mce"):
            log.warning("%s run: %d dual decreases beyond %.1e", self.kind, dv, self.cfg.dual_slack)
        return RunResult(recs, r, pi, converged, self.sweeps, self.linear, reason, dv, kv, self.kind,
                         compute_occupancy(self.mdp, pi).rho, extra or {})


class _Sampler:
    """Sampled-mode discriminator: fixed expert samples, fresh agent samples."""

    def __init__(self, mdp, expert_policy, cfg: ExperimentConfig):
        self.mdp, self.cfg = mdp, cfg
        self.n_traj = max(1, cfg.n_samples // cfg.horizon)
        ss = np.random.SeedSequence(cfg.seed)
        self.seeds = iter(int(s.generate_state(1)[0]) for s in ss.spawn(10**6))
        self.expert = sample_trajectories(mdp, expert_policy, self.n_traj, cfg.horizon, next(self.seeds))
        self.last_batch = None

    def provider(self, pi: TabularPolicy) -> RatioProvider:
        agent = sample_trajectories(self.mdp, pi, self.n_traj, self.cfg.horizon, next(self.seeds))
        self.last_batch = agent
        return train_logistic_discriminator(self.expert, agent, self.cfg.disc_steps, self.cfg.disc_lr,
                                            n_states=self.mdp.n_states, n_actions=self.mdp.n_actions)


def _stop(rec: IterationRecord, cfg: ExperimentConfig) -> str | None:
    # at finite beta the saddle keeps a small reverse KL, so a vanishing dual
    # gradient also counts as convergence
    if rec.reverse_kl < cfg.tol:
        return "tol"
    if rec.grad_norm < cfg.grad_tol:
        return "stationary"
    return None


def _initial(mdp: TabularMdp):
    r = np.zeros((mdp.n_states, mdp.n_actions))
    pi = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    # soft value of the zero reward is log|A| / (1 - gamma) everywhere
    v = np.full(mdp.n_states, math.log(mdp.n_actions) / (1.0 - mdp.gamma))
    return r, pi, v


# -------------------------------------------------------------------- loops

def run_trirl(mdp: TabularMdp, rho_e, cfg: ExperimentConfig = ExperimentConfig(),
              expert_policy: TabularPolicy | None = None) -> RunResult:
    """Trust-region IRL.

    Per iteration: log-ratio estimate, intermediate reward from the buffer,
    trust-region solve (eta search, or scheduled eta for ``tr_loss``), step
    correction epsilon / (1 + eta), corrected fold. ``rho_e`` drives the
    exact log ratio and all diagnostics; in sampled mode the log ratio comes
    from a discriminator trained on rollouts of ``expert_policy``.
    """
    if cfg.variant == "tr_loss":
        return run_tr_loss_variant(mdp, rho_e, cfg, expert_policy)
    return _trirl_loop(mdp, rho_e, cfg, expert_policy, kind="trirl")


def _estimate(mdp, rho_e, pi, cfg, sampler) -> RatioProvider:
    if sampler is not None:
        return sampler.provider(pi)
    return RatioProvider.exact(rho_e, compute_occupancy(mdp, pi), cfg.floor)


def _setup(mdp, rho_e, cfg, expert_policy, kind):
    sampler = None
    if cfg.mode == "sampled":
        if expert_policy is None:
            raise ConfigError("config key 'mode': sampled mode needs an expert policy to roll out")
        sampler = _Sampler(mdp, expert_policy, cfg)
    tr = _Tracker(mdp, rho_e, cfg, kind)
    r, pi, v = _initial(mdp)
    # the acceptance test needs rho_E, which sampled mode does not have
    adaptive = cfg.adaptive_radius and sampler is None
    return sampler, tr, r, pi, v, adaptive


def _trirl_loop(mdp, rho_e, cfg, expert_policy, kind, ablation=None) -> RunResult:
    sampler, tr, r, pi, v, adaptive = _setup(mdp, rho_e, cfg, expert_policy, kind)
    rho_e_arr = _occ(rho_e)
    rng = np.random.default_rng(cfg.seed)
    buf = DiscBuffer.empty(cfg.buffer_k, r.shape, cfg.epsilon, cfg.beta)
    g = dual_from_value(mdp, v, r, rho_e_arr, cfg.beta, cfg.floor)
    rec = tr.record(0, r, pi, 0.0, 0.0, 0.0)
    if _stop(rec, cfg):
        return tr.result(r, pi, True, _stop(rec, cfg), {"buffer": buf})
    kl_cur = rec.reverse_kl
    eta_prev = 0.0
    retro = cfg.variant == "retrospective_eta" and ablation is None
    for i in range(1, cfg.max_iters + 1):
        prov = _estimate(mdp, rho_e, pi, cfg, sampler)
        if ablation == "no_buffer_local":
            r_tilde = cfg.beta * prov.logits
        else:
            buf = buffer_push(buf, prov, 0.0, pi, cfg.fit_noise, rng)
            buf_plain = buf
            if retro:
                batch = sampler.last_batch if sampler is not None else np.flatnonzero(
                    compute_occupancy(mdp, pi).state_marginal > cfg.floor)
                buf = recompute_etas_retrospective(buf, mdp, batch, cfg.zeta, keep_newest=True)
            r_tilde = buffer_intermediate_reward(buf)
        rejected, zeta_cur = 0, cfg.zeta
        hindsight = retro and buf is not buf_plain
        while True:
            res = solve_trust_region(mdp, r_tilde, pi, zeta_cur, cfg.kl_tol * zeta_cur, tol=cfg.vi_tol,
                                     v_init=v, eta_hint=eta_prev if cfg.eta_warm_start else None, polish=1)
            tr.sweeps += res.sweeps
            tr.linear += 1
            if res.monotone_violation > 1e-9:
                log.warning("iteration %d: expected KL not monotone in eta (%.3e)", i, res.monotone_violation)
            eta = res.eta
            if ablation is None:
                buf_new = buf.with_newest_eta(eta)
                r_new = buffer_corrected_reward(buf_new)
                eps_tr = cfg.epsilon / (1.0 + eta)
            else:
                buf_new, r_new, eps_tr = buf, r_tilde, cfg.epsilon
            if ablation is not None:
                v_new = res.solution.v
            elif hindsight:
                # older etas moved, so the shaping identity no longer applies
                sol = soft_value_iteration(mdp, r_new, cfg.vi_tol, v_init=res.solution.v + eta / (1 + eta) * v,
                                           polish=1)
                tr.sweeps += sol.iterations
                tr.linear += 1
                v_new = sol.v
            else:
                # r_new is r_eta plus a potential-shaping term with potential
                # eta / (1 + eta) * V_prev, so its soft value is known exactly
                v_new = res.solution.v + eta / (1.0 + eta) * v
            g_new = dual_from_value(mdp, v_new, r_new, rho_e_arr, cfg.beta, cfg.floor)
            if not adaptive or ablation is not None:
                break
            if g_new <= g and (not cfg.kl_guard or reverse_kl(
                    compute_occupancy(mdp, res.policy), rho_e_arr, cfg.floor) <= kl_cur + cfg.dual_slack):
                break
            rejected += 1
            if hindsight:
                # the recomputed etas moved the previous reward away from the one
                # pi is optimal for; retry this step with the etas as they were
                hindsight, buf = False, buf_plain
                r_tilde = buffer_intermediate_reward(buf)
                continue
            zeta_cur *= cfg.radius_shrink
            # expected KL falls roughly like (1 + eta)^-2
            eta_prev = (1.0 + eta) / math.sqrt(cfg.radius_shrink) - 1.0
            if zeta_cur < cfg.min_radius * cfg.zeta:
                tr.record(i, r, pi, 0.0, 0.0, 0.0, rejected)
                return tr.result(r, pi, False, "radius", {"buffer": buf})
        buf, r, pi, v, g = buf_new, r_new, res.policy, v_new, g_new
        eta_prev = eta
        rec = tr.record(i, r, pi, eta, eps_tr, res.expected_kl, rejected)
        kl_cur = rec.reverse_kl
        if _stop(rec, cfg):
            return tr.result(r, pi, True, _stop(rec, cfg), {"buffer": buf})
    return tr.result(r, pi, False, "max_iters", {"buffer": buf})


def run_mce_irl(mdp: TabularMdp, rho_e, cfg: ExperimentConfig = ExperimentConfig(),
                expert_policy: TabularPolicy | None = None) -> RunResult:
    """Baseline: full soft value iteration after every reward update."""
    sampler, tr, r, pi, v, adaptive = _setup(mdp, rho_e, cfg, expert_policy, "mce")
    rho_e_arr = _occ(rho_e)
    g = dual_from_value(mdp, v, r, rho_e_arr, cfg.beta, cfg.floor)
    rec = tr.record(0, r, pi, 0.0, 0.0, 0.0)
    if _stop(rec, cfg):
        return tr.result(r, pi, True, _stop(rec, cfg))
    for i in range(1, cfg.max_iters + 1):
        d = _estimate(mdp, rho_e, pi, cfg, sampler).logits
        rejected, eps = 0, cfg.epsilon
        while True:
            r_new = reward_update(r, d, eps, cfg.beta)
            sol = soft_value_iteration(mdp, r_new, cfg.vi_tol, v_init=v, polish=1)
            tr.sweeps += sol.iterations
            tr.linear += 1
            g_new = dual_from_value(mdp, sol.v, r_new, rho_e_arr, cfg.beta, cfg.floor)
            if not adaptive or g_new <= g:
                break
            rejected += 1
            eps *= cfg.radius_shrink
            if eps < cfg.min_radius * cfg.epsilon:
                tr.record(i, r, pi, 0.0, 0.0, 0.0, rejected)
                return tr.result(r, pi, False, "radius")
        ekl = expected_policy_kl(mdp, sol.policy, pi)
        r, pi, v, g = r_new, sol.policy, sol.v, g_new
        rec = tr.record(i, r, pi, 0.0, eps, ekl, rejected)
        if _stop(rec, cfg):
            return tr.result(r, pi, True, _stop(rec, cfg))
    return tr.result(r, pi, False, "max_iters")


def run_tr_loss_variant(mdp: TabularMdp, rho_e, cfg: ExperimentConfig = ExperimentConfig(),
                        expert_policy: TabularPolicy | None = None) -> RunResult:
    """Scheduled eta used directly in the trust-region reward transform, no KL search.

    On a rejected step the effective multiplier becomes (1 + eta) m - 1 with
    m growing by 1 / radius_shrink, so with eta = 0 the loop coincides with the
    MCE-IRL baseline.
    """
    sampler, tr, r, pi, v, adaptive = _setup(mdp, rho_e, cfg, expert_policy, "tr_loss")
    rho_e_arr = _occ(rho_e)
    rng = np.random.default_rng(cfg.seed)
    buf = DiscBuffer.empty(cfg.buffer_k, r.shape, cfg.epsilon, cfg.beta)
    g = dual_from_value(mdp, v, r, rho_e_arr, cfg.beta, cfg.floor)
    rec = tr.record(0, r, pi, 0.0, 0.0, 0.0)
    if _stop(rec, cfg):
        return tr.result(r, pi, True, _stop(rec, cfg))
    for i in range(1, cfg.max_iters + 1):
        prov = _estimate(mdp, rho_e, pi, cfg, sampler)
        buf = buffer_push(buf, prov, 0.0, pi, cfg.fit_noise, rng)
        r_tilde = buffer_intermediate_reward(buf)
        rejected, m = 0, 1.0
        while True:
            eta = (1.0 + cfg.eta_at(i)) * m - 1.0
            sol = soft_value_iteration(mdp, lemma1_transform(r_tilde, pi, eta), cfg.vi_tol,
                                       v_init=v / (1.0 + eta), polish=1)
            tr.sweeps += sol.iterations
            tr.linear += 1
            buf_new = buf.with_newest_eta(eta)
            r_new = buffer_corrected_reward(buf_new)
            v_new = sol.v + eta / (1.0 + eta) * v
            g_new = dual_from_value(mdp, v_new, r_new, rho_e_arr, cfg.beta, cfg.floor)
            if not adaptive or g_new <= g:
                break
            rejected += 1
            m /= cfg.radius_shrink
            if 1.0 / m < cfg.min_radius:
                tr.record(i, r, pi, 0.0, 0.0, 0.0, rejected)
                return tr.result(r, pi, False, "radius")
        ekl = expected_policy_kl(mdp, sol.policy, pi)
        buf, r, pi, v, g = buf_new, r_new, sol.policy, v_new, g_new
        rec = tr.record(i, r, pi, eta, cfg.epsilon / (1.0 + eta), ekl, rejected)
        if _stop(rec, cfg):
            return tr.result(r, pi, True, _stop(rec, cfg))
    return tr.result(r, pi, False, "max_iters")


def soft_bellman_sweeps(mdp: TabularMdp, reward: np.ndarray, v: np.ndarray, n: int) -> SoftSolution:
    """Exactly n soft Bellman sweeps from v (no convergence requirement)."""
    row_ptr, cols, probs = mdp.csr
    w, sweeps, res = kernels.soft_bellman_solve(row_ptr, cols, probs, np.ascontiguousarray(reward), mdp.gamma,
                                                np.ascontiguousarray(v, dtype=float), 0.0, n)
    q = reward + mdp.gamma * (mdp.transition @ w)
    pol = boltzmann_policy(q)
    return SoftSolution(q, w, pol, int(sweeps), float(res))


def _gail_like(mdp, rho_e, cfg, expert_policy) -> RunResult:
    sampler, tr, r, pi, v, _ = _setup(mdp, rho_e, cfg, expert_policy, "gail_like")
    tr.record(0, r, pi, 0.0, 0.0, 0.0)
    for i in range(1, cfg.max_iters + 1):
        prov = _estimate(mdp, rho_e, pi, cfg, sampler)
        r = log_expit(prov.logits)
        sol = soft_bellman_sweeps(mdp, r, v, cfg.gail_sweeps)
        tr.sweeps += sol.iterations
        ekl = expected_policy_kl(mdp, sol.policy, pi)
        pi, v = sol.policy, sol.v
        rec = tr.record(i, r, pi, 0.0, 0.0, ekl)
        if _stop(rec, cfg):
            return tr.result(r, pi, True, _stop(rec, cfg))
    return tr.result(r, pi, False, "max_iters")


def run_ablation(mdp: TabularMdp, rho_e, cfg: ExperimentConfig, which: str,
                 expert_policy: TabularPolicy | None = None) -> RunResult:
    """Comparison variants without the monotonicity guarantee (never rejected)."""
    if which not in ABLATIONS:
        raise ConfigError(f"config key 'ablation': must be one of {ABLATIONS}")
    if which == "gail_like":
        return _gail_like(mdp, rho_e, cfg, expert_policy)
    return _trirl_loop(mdp, rho_e, cfg, expert_policy, kind=which, ablation=which)


# ---------------------------------------------------------------- transfer

def greedy_path(mdp: TabularMdp, policy: TabularPolicy, start: int, max_steps: int | None = None) -> list[int]:
    """States visited by taking the greedy action and its most likely successor."""
    act = policy.greedy()
    path = [int(start)]
    for _ in range(max_steps or mdp.n_states):
        s = path[-1]
        nxt = int(np.argmax(mdp.transition[s, act[s]]))
        if nxt == s:
            break
        path.append(nxt)
    return path


def greedy_agreement(mdp: TabularMdp, pi_a: TabularPolicy, pi_b: TabularPolicy) -> float:
    """Fraction of reachable states where the greedy actions coincide."""
    live = mdp.reachable
    return float(np.mean(pi_a.greedy()[live] == pi_b.greedy()[live]))


def _frozen_result(mdp, reward, rho_e, cfg, kind) -> RunResult:
    tr = _Tracker(mdp, rho_e, cfg, kind)
    sol = soft_value_iteration(mdp, reward, cfg.vi_tol, polish=2)
    tr.sweeps = sol.iterations
    tr.record(0, reward, sol.policy, 0.0, 0.0, 0.0)
    return tr.result(reward, sol.policy, True, "frozen")


def run_transfer(mdp_train: TabularMdp, mdp_transfer: TabularMdp, rho_e, cfg: ExperimentConfig,
                 rho_e_transfer=None, reward_map=None,
                 expert_policy: TabularPolicy | None = None) -> tuple[RunResult, RunResult, RunResult]:
    """(trained, retrained-from-scratch on frozen reward, frozen reward on the
    transfer MDP). ``reward_map`` carries the reward table across a state or
    action relabeling (identity by default)."""
    if mdp_train.transition.shape != mdp_transfer.transition.shape:
        raise ValueError("transfer MDP must share the state and action spaces")
    trained = run_trirl(mdp_train, rho_e, cfg, expert_policy)
    frozen = np.array(trained.final_reward, copy=True)
    retrained = _frozen_result(mdp_train, frozen, rho_e, cfg, "retrain")
    moved = frozen if reward_map is None else reward_map(frozen)
    target = rho_e if rho_e_transfer is None else rho_e_transfer
    transferred = _frozen_result(mdp_transfer, moved, target, cfg, "transfer")
    return trained, retrained, transferred


def mirror_reward(env: Environment):
    """Reward relabeling onto the left-right mirrored gridworld."""
    sp, ap = env.grid.mirror_permutations()

    def f(r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        out[np.ix_(sp, ap)] = r
        return out

    return f


__all__ = [
    "ABLATIONS", "ConfigError", "ExperimentConfig", "IterationRecord", "RunResult", "SolverError",
    "count_violations", "expert_for", "greedy_agreement", "greedy_path", "mirror_reward", "run_ablation",
    "run_mce_irl", "run_tr_loss_variant", "run_transfer", "run_trirl", "soft_bellman_sweeps",
]

