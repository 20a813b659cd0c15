"""Log-density-ratio providers, rollouts, and the discriminator buffer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from trirl._backend import kernels
from trirl.mdp import Occupancy, TabularMdp, TabularPolicy
from trirl.reward import FLOOR, log_density_ratio_exact


@dataclass(frozen=True, eq=False)
class RatioProvider:
    """Estimate of log(rho_E / rho_pi) as a logit table over (s, a).

    In sampled mode the table holds the weights of a linear classifier on
    one-hot (s, a) features, which are the logits themselves.
    """

    mode: str
    logits: np.ndarray

    def __post_init__(self):
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        lg = np.array(self.logits, dtype=np.float64, copy=True)
        if not np.isfinite(lg).all():
            raise ValueError("provider logits must be finite")
        lg.setflags(write=False)
        object.__setattr__(self, "logits", lg)

    @classmethod
    def exact(cls, rho_e, rho_pi, floor: float = FLOOR) -> "RatioProvider":
        return cls("exact", log_density_ratio_exact(rho_e, rho_pi, floor))


# ------------------------------------------------------------------ rollouts

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fixed-length rollout; row t is the transition (s_t, a_t, s'_t).

    s_{t+1} differs from s'_t only where the rollout was reset to mu0.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def transitions(self) -> list[tuple[int, int, int]]:
        return list(zip(self.states.tolist(), self.actions.tolist(), self.next_states.tolist()))


def _cdf_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise cdf; entries from the last positive probability on are
    pinned (1 then +inf) so a uniform draw in [0, 1) never selects a
    zero-probability index."""
    c = np.cumsum(p, axis=-1)
    c = c / c[..., -1:]
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    idx = np.arange(p.shape[-1])
    c = np.where(idx == last[..., None], 1.0, c)
    return np.where(idx > last[..., None], np.inf, c)


def _sampler_tables(mdp: TabularMdp, policy: TabularPolicy):
    row_ptr, cols, probs = mdp.csr
    p_cdf = np.empty_like(probs)
    for row in range(len(row_ptr) - 1):
        lo, hi = row_ptr[row], row_ptr[row + 1]
        p_cdf[lo:hi] = _cdf_rows(probs[lo:hi])
    pi_cdf = np.ascontiguousarray(_cdf_rows(policy.probs).ravel())
    mu_cdf = np.ascontiguousarray(_cdf_rows(mdp.initial_dist))
    return pi_cdf, row_ptr, cols, p_cdf, mu_cdf


def sample_trajectories(mdp: TabularMdp, policy: TabularPolicy, n: int, horizon: int,
                        seed: int) -> list[Trajectory]:
    """n rollouts of ``horizon`` steps; after every step the rollout restarts
    from mu0 with probability 1 - gamma, so long-run (s, a) frequencies are
    the normalized discounted occupancy."""
    if n <= 0 or horizon <= 0:
        raise ValueError("n and horizon must be positive")
    tables = _sampler_tables(mdp, policy)
    u = np.random.default_rng(seed).random((n, horizon + 1, 4))
    st, ac, nx = kernels.sample_rollouts(*tables, mdp.n_actions, mdp.gamma, u)
    return [Trajectory(st[i], ac[i], nx[i]) for i in range(n)]


def visit_counts(trajs: Sequence[Trajectory], n_states: int, n_actions: int) -> np.ndarray:
    counts = np.zeros(n_states * n_actions)
    for t in trajs:
        counts += np.bincount(t.states * n_actions + t.actions, minlength=n_states * n_actions)
    return counts.reshape(n_states, n_actions)


def empirical_occupancy(trajs: Sequence[Trajectory], n_states: int, n_actions: int) -> np.ndarray:
    c = visit_counts(trajs, n_states, n_actions)
    return c / c.sum()


# ------------------------------------------------------------ discriminator

def train_logistic_discriminator(expert: Sequence[Trajectory], agent: Sequence[Trajectory], steps: int = 2000,
                                 lr: float = 2.0, *, n_states: int | None = None,
                                 n_actions: int | None = None) -> RatioProvider:
    """Logistic regression on one-hot (s, a) features, expert = class 1.

    Full-batch gradient descent on the class-balanced binary cross-entropy
    (each class averaged over its own samples), so that the optimal logit is
    log of the ratio of empirical frequencies.
    """
    if not expert or not agent:
        raise ValueError("both sample sets must be non-empty")
    if n_states is None:
        n_states = 1 + max(int(max(t.states.max(), t.next_states.max())) for t in [*expert, *agent])
    if n_actions is None:
        n_actions = 1 + max(int(t.actions.max()) for t in [*expert, *agent])
    fe = empirical_occupancy(expert, n_states, n_actions)
    fa = empirical_occupancy(agent, n_states, n_actions)
    w = np.zeros((n_states, n_actions))
    for _ in range(steps):
        s = expit(w)
        grad = fe * (s - 1.0) + fa * s
        w = w - lr * grad
    loss = -(fe * log_expit(w)).sum() - (fa * log_expit(-w)).sum()
    if not math.isfinite(loss) or not np.isfinite(w).all():
        raise FloatingPointError("discriminator loss is not finite")
    return RatioProvider("sampled", w)


# ------------------------------------------------------------------- buffer

@dataclass(frozen=True, eq=False)
class BufferEntry:
    provider: RatioProvider
    eta: float
    policy: TabularPolicy


@dataclass(frozen=True, eq=False)
class DiscBuffer:
    """Fitted base reward plus the k most recent log-ratio estimates.

    ``fit_error`` is the noise injected at the last fold (zero when fitting is
    exact); it is kept so the influence of the base-reward error on the
    evaluated reward can be measured.
    """

    capacity: int
    base_reward: np.ndarray
    epsilon: float
    beta: float
    entries: tuple = ()
    fit_error: np.ndarray | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if len(self.entries) > self.capacity:
            raise ValueError("more entries than capacity")
        if any(not e.eta >= 0 for e in self.entries):
            raise ValueError("buffer etas must be nonnegative")
        base = np.array(self.base_reward, dtype=np.float64, copy=True)
        base.setflags(write=False)
        object.__setattr__(self, "base_reward", base)
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def empty(cls, capacity: int, shape: tuple[int, int], epsilon: float, beta: float) -> "DiscBuffer":
        return cls(capacity, np.zeros(shape), epsilon, beta)

    def steps(self) -> list[float]:
        return [self.epsilon / (1.0 + e.eta) for e in self.entries]

    def decay_factor(self) -> float:
        """prod_i (1 - eps_tr_i): weight of base_reward in the corrected reward."""
        return float(np.prod([1.0 - s for s in self.steps()]))

    def with_etas(self, etas: Sequence[float]) -> "DiscBuffer":
        if len(etas) != len(self.entries):
            raise ValueError("one eta per entry required")
        ents = tuple(replace(e, eta=float(x)) for e, x in zip(self.entries, etas))
        return replace(self, entries=ents)

    def with_newest_eta(self, eta: float) -> "DiscBuffer":
        if not self.entries:
            raise ValueError("buffer is empty")
        return self.with_etas([e.eta for e in self.entries[:-1]] + [eta])

    def with_base(self, base: np.ndarray) -> "DiscBuffer":
        return replace(self, base_reward=base)


def _fold(r: np.ndarray, logits: np.ndarray, step: float, beta: float) -> np.ndarray:
    return (1.0 - step) * r + step * beta * logits


def buffer_push(buf: DiscBuffer, provider: RatioProvider, eta: float, policy: TabularPolicy,
                fit_noise: float = 0.0, rng: np.random.Generator | None = None) -> DiscBuffer:
    """Append an entry; on overflow fold the oldest into the base reward.

    With ``fit_noise > 0`` the folded base reward is perturbed by uniform
    noise in [-fit_noise, fit_noise], standing in for the error of fitting a
    parametric reward to the corrected reward.
    """
    if not eta >= 0:
        raise ValueError("eta must be nonnegative")
    entries = buf.entries + (BufferEntry(provider, float(eta), policy),)
    base, fit_error = buf.base_reward, buf.fit_error
    if len(entries) > buf.capacity:
        old, entries = entries[0], entries[1:]
        base = _fold(base, old.provider.logits, buf.epsilon / (1.0 + old.eta), buf.beta)
        fit_error = None
        if fit_noise > 0:
            rng = rng if rng is not None else np.random.default_rng(0)
            fit_error = rng.uniform(-fit_noise, fit_noise, size=base.shape)
            base = base + fit_error
    return DiscBuffer(buf.capacity, base, buf.epsilon, buf.beta, entries, fit_error)


def buffer_corrected_reward(buf: DiscBuffer) -> np.ndarray:
    """Fold base_reward through all entries with steps epsilon / (1 + eta_i)."""
    r = np.array(buf.base_reward, copy=True)
    for e in buf.entries:
        r = _fold(r, e.provider.logits, buf.epsilon / (1.0 + e.eta), buf.beta)
    return r


def buffer_intermediate_reward(buf: DiscBuffer) -> np.ndarray:
    """Corrected fold over all but the newest entry, then a full epsilon step
    with the newest logits."""
    if not buf.entries:
        raise ValueError("intermediate reward needs at least one entry")
    r = buffer_corrected_reward(replace(buf, entries=buf.entries[:-1]))
    return _fold(r, buf.entries[-1].provider.logits, buf.epsilon, buf.beta)


def unlimited_history_reward(base: np.ndarray, logits: Sequence[np.ndarray], etas: Sequence[float],
                             epsilon: float, beta: float) -> np.ndarray:
    """The same fold without truncation; reference for the buffer."""
    r = np.array(base, dtype=np.float64, copy=True)
    for lg, eta in zip(logits, etas):
        r = _fold(r, np.asarray(lg), epsilon / (1.0 + eta), beta)
    return r


def per_state_eta(pi_new: np.ndarray, pi_old: np.ndarray, zeta: float, iters: int = 200) -> float:
    """Multiplier projecting one state's action distribution into the KL ball.

    The projection of pi_new onto {p : KL(p || pi_old) <= zeta} along the
    trust-region family is p_eta proportional to pi_new^(1/(1+eta)) pi_old^(eta/(1+eta));
    the returned eta puts KL(p_eta || pi_old) at zeta, or 0 if already inside.
    """
    ln, lo_ = np.log(pi_new), np.log(pi_old)

    def kl(eta):
        z = (ln + eta * lo_) / (1.0 + eta)
        lp = z - np.log(np.exp(z - z.max()).sum()) - z.max()
        return float(np.sum(np.exp(lp) * (lp - lo_)))

    if kl(0.0) <= zeta:
        return 0.0
    lo, hi = 0.0, 1.0
    while kl(hi) > zeta:
        lo, hi = hi, hi * 4.0
        if hi > 1e12:
            return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if kl(mid) > zeta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return hi


def recompute_etas_retrospective(buf: DiscBuffer, mdp: TabularMdp, current_batch: Sequence[Trajectory] | np.ndarray,
                                 zeta: float, current_policy: TabularPolicy | None = None,
                                 keep_newest: bool = True) -> DiscBuffer:
    """Per-state max-eta recomputation over the states in ``current_batch``.

    Entry j's successor policy is the snapshot of entry j+1; the newest
    entry's successor is ``current_policy`` (or it is left untouched when
    ``keep_newest``). ``current_batch`` is a list of trajectories or an array
    of state indices.
    """
    if isinstance(current_batch, np.ndarray):
        states = np.unique(current_batch.astype(np.int64))
    else:
        states = np.unique(np.concatenate([t.states for t in current_batch])) if current_batch else np.array([], int)
    ents = buf.entries
    etas = [e.eta for e in ents]
    n = len(ents) - (1 if keep_newest or current_policy is None else 0)
    for j in range(n):
        succ = ents[j + 1].policy if j + 1 < len(ents) else current_policy
        old = ents[j].policy
        etas[j] = max((per_state_eta(succ.probs[s], old.probs[s], zeta) for s in states), default=0.0)
    return buf.with_etas(etas)


# ------------------------------------------------------------ serialization

def buffer_to_json(buf: DiscBuffer) -> str:
    """Checkpoint format: JSON with base reward, settings and entries.

    Policies are stored as log-probabilities so that strictly positive
    Boltzmann rows round-trip exactly (floats are written with repr
    precision)."""
    doc = {
        "format": "trirl-buffer/1",
        "capacity": buf.capacity,
        "epsilon": buf.epsilon,
        "beta": buf.beta,
        "base_reward": buf.base_reward.tolist(),
        "entries": [
            {"mode": e.provider.mode, "logits": e.provider.logits.tolist(), "eta": e.eta,
             "log_policy": e.policy.log_probs.tolist()}
            for e in buf.entries
        ],
    }
    return json.dumps(doc)


def buffer_from_json(text: str) -> DiscBuffer:
    doc = json.loads(text)
    if doc.get("format") != "trirl-buffer/1":
        raise ValueError("not a trirl buffer checkpoint")
    ents = tuple(
        BufferEntry(RatioProvider(e["mode"], np.array(e["logits"])), float(e["eta"]),
                    TabularPolicy(log_probs=np.array(e["log_policy"])))
        for e in doc["entries"]
    )
    return DiscBuffer(int(doc["capacity"]), np.array(doc["base_reward"]), float(doc["epsilon"]),
                      float(doc["beta"]), ents)


def exact_provider(rho_e: Occupancy, rho_pi: Occupancy, floor: float = FLOOR) -> RatioProvider:
    return RatioProvider.exact(rho_e, rho_pi, floor)
