"""Property tests over randomly generated instances."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_mdp, random_policy
from trirl.density import DiscBuffer, RatioProvider, buffer_corrected_reward, buffer_push, unlimited_history_reward
from trirl.mdp import TabularMdp, TabularPolicy, compute_occupancy, expected_policy_kl, policy_from_occupancy
from trirl.reward import alignment_check, dual_objective, log_density_ratio_exact, reverse_kl, rho_hat
from trirl.solver import lemma1_transform, soft_value_iteration, solve_trust_region
from trirl.trpl import project, random_instance

SETTINGS = settings(max_examples=100, deadline=None)

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(1, 6)
gammas = st.sampled_from([0.0, 0.5, 0.9, 0.99])


def instance(seed, n_s, n_a, gamma, conc=1.0):
    rng = np.random.default_rng(seed)
    p, mu, g = random_mdp(rng, n_s, n_a, gamma)
    return rng, TabularMdp(p, mu, g), TabularPolicy(random_policy(rng, n_s, n_a, conc))


@SETTINGS
@given(seeds, sizes, sizes, gammas)
def test_flow_conservation(seed, n_s, n_a, gamma):
    _, mdp, pi = instance(seed, n_s, n_a, gamma)
    occ = compute_occupancy(mdp, pi)
    d = occ.state_marginal
    ppi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
    assert np.abs((1 - gamma) * mdp.initial_dist + gamma * ppi.T @ d - d).max() <= 1e-10
    assert abs(occ.rho.sum() - 1) <= 1e-10 and (occ.rho >= 0).all()


@SETTINGS
@given(seeds, sizes, sizes, gammas)
def test_occupancy_policy_round_trip(seed, n_s, n_a, gamma):
    _, mdp, pi = instance(seed, n_s, n_a, gamma)
    occ = compute_occupancy(mdp, pi)
    back = policy_from_occupancy(occ)
    live = occ.state_marginal > 0
    assert np.abs(back.probs[live] - pi.probs[live]).max(initial=0.0) <= 1e-9


@SETTINGS
@given(seeds, sizes, sizes, gammas)
def test_policy_kl_nonnegative_and_zero_on_self(seed, n_s, n_a, gamma):
    rng, mdp, pi = instance(seed, n_s, n_a, gamma)
    other = TabularPolicy(random_policy(rng, n_s, n_a))
    assert expected_policy_kl(mdp, pi, pi) == 0.0
    assert expected_policy_kl(mdp, pi, other) >= 0.0


@SETTINGS
@given(seeds, sizes, sizes)
def test_reverse_kl_nonnegative(seed, n_s, n_a):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(n_s * n_a)).reshape(n_s, n_a)
    b = rng.dirichlet(np.ones(n_s * n_a)).reshape(n_s, n_a)
    assert reverse_kl(a, b) >= 0.0
    assert np.allclose(log_density_ratio_exact(a, b), -log_density_ratio_exact(b, a), atol=1e-12)


@SETTINGS
@given(seeds, sizes, sizes, gammas, st.floats(0.1, 5.0))
def test_boltzmann_consistency(seed, n_s, n_a, gamma, scale):
    rng, mdp, _ = instance(seed, n_s, n_a, gamma)
    sol = soft_value_iteration(mdp, scale * rng.normal(size=(n_s, n_a)))
    assert np.abs(sol.policy.probs.sum(axis=1) - 1).max() <= 1e-10
    assert np.abs(sol.policy.log_probs + sol.v[:, None] - sol.q).max() <= 1e-9 * max(1.0, np.abs(sol.q).max())


@SETTINGS
@given(seeds, st.integers(1, 12), st.integers(1, 30), st.floats(0.05, 1.0))
def test_buffer_exact_fit(seed, k, n_push, eps):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(2, 3))
    logits = [rng.normal(size=(2, 3)) for _ in range(n_push)]
    etas = list(rng.exponential(2.0, size=n_push))
    buf = DiscBuffer(k, base, eps, 7.0)
    pol = TabularPolicy.uniform(2, 3)
    for lg, eta in zip(logits, etas):
        buf = buffer_push(buf, RatioProvider("exact", lg), eta, pol)
    assert len(buf.entries) == min(k, n_push)
    assert np.array_equal(buffer_corrected_reward(buf), unlimited_history_reward(base, logits, etas, eps, 7.0))


@SETTINGS
@given(seeds, st.sampled_from([1, 2, 5, 10]), st.floats(1e-4, 0.05), st.floats(1e-4, 0.05))
def test_trpl_bounds_and_idempotence(seed, d, zeta_mu, zeta_sigma):
    pred, old = random_instance(seed, d)
    res = project(pred, old, zeta_mu, zeta_sigma)
    assert res.d_mean_after <= zeta_mu + 1e-8 and res.d_cov_after <= zeta_sigma + 1e-8
    assert (res.eta_mu > 0) <= (abs(res.d_mean_after - zeta_mu) <= 1e-8)
    assert (res.eta_sigma > 0) <= (abs(res.d_cov_after - zeta_sigma) <= 1e-8)
    again = project(res.projected, old, zeta_mu, zeta_sigma)
    assert np.abs(again.projected.mean - res.projected.mean).max() <= 1e-9
    assert np.abs(again.projected.cov - res.projected.cov).max() <= 1e-9


@SETTINGS
@given(seeds, sizes, sizes, st.floats(0.5, 200.0))
def test_alignment_identity(seed, n_s, n_a, beta):
    rng, mdp, _ = instance(seed, n_s, n_a, 0.9)
    r = rng.normal(size=(n_s, n_a))
    rho_e = rng.dirichlet(np.ones(n_s * n_a)).reshape(n_s, n_a)
    rho_pi = compute_occupancy(mdp, soft_value_iteration(mdp, r).policy).rho
    h = rho_hat(r, rho_e, beta)
    delta = r - beta * log_density_ratio_exact(rho_e, rho_pi)
    lhs, rhs = alignment_check(delta, rho_pi - h, rho_pi, h, beta)
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))
    assert lhs >= -1e-10


@SETTINGS
@given(seeds, sizes, sizes, st.floats(-50.0, 50.0))
def test_dual_shift_invariance(seed, n_s, n_a, c):
    rng, mdp, _ = instance(seed, n_s, n_a, 0.9)
    r = rng.normal(size=(n_s, n_a))
    rho_e = rng.dirichlet(np.ones(n_s * n_a)).reshape(n_s, n_a)
    a = dual_objective(mdp, r, rho_e, 3.0, tol=1e-14)
    b = dual_objective(mdp, r + c, rho_e, 3.0, tol=1e-14)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(c))


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(2, 5), st.integers(2, 4), st.sampled_from([1e-3, 1e-2]))
def test_trust_region_invariants(seed, n_s, n_a, zeta):
    rng, mdp, prev = instance(seed, n_s, n_a, 0.9, conc=3.0)
    r = 3 * rng.normal(size=(n_s, n_a))
    res = solve_trust_region(mdp, r, prev, zeta)
    assert res.active == (res.eta > 0)
    if res.active:
        assert abs(res.expected_kl - zeta) <= 0.05 * zeta
    else:
        assert res.expected_kl <= zeta
    assert res.monotone_violation <= 1e-9
    direct = soft_value_iteration(mdp, lemma1_transform(r, prev, res.eta)).policy
    assert np.abs(res.policy.probs - direct.probs).max() <= 1e-8
