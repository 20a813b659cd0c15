import math

import numpy as np
import pytest

from trirl.driver import (
    ABLATIONS,
    ConfigError,
    ExperimentConfig,
    count_violations,
    expert_for,
    greedy_agreement,
    greedy_path,
    mirror_reward,
    run_ablation,
    run_mce_irl,
    run_transfer,
    run_trirl,
)
from trirl.mdp import TabularMdp, TabularPolicy, compute_occupancy
from trirl.solver import soft_value_iteration

CFG = ExperimentConfig(record_time=False)


@pytest.fixture(scope="module")
def expert5(grid5):
    return expert_for(grid5, 0)


@pytest.fixture(scope="module")
def run5(grid5, expert5):
    pol, occ = expert5
    return run_trirl(grid5.mdp, occ, CFG, pol)


# ------------------------------------------------------------------ config

def test_config_defaults():
    assert (CFG.epsilon, CFG.beta, CFG.zeta) == (0.6, 100.0, 1e-3)


@pytest.mark.parametrize("key,value", [("epsilon", 0.0), ("epsilon", 1.5), ("beta", -1.0), ("zeta", 0.0),
                                       ("mode", "guess"), ("variant", "x"), ("buffer_k", 0),
                                       ("radius_shrink", 1.0), ("max_iters", 2.5), ("kl_guard", 1)])
def test_config_error_names_key(key, value):
    with pytest.raises(ConfigError, match=repr(key)):
        ExperimentConfig(**{key: value})


def test_config_from_dict_unknown_key():
    with pytest.raises(ConfigError, match="'epsilonn'"):
        ExperimentConfig.from_dict({"epsilonn": 0.5})


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"beta": 10, "zeta": 0.01})
    assert cfg.beta == 10.0 and ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_eta_schedules():
    assert ExperimentConfig(eta_init=8.0).eta_at(7) == 8.0
    lin = ExperimentConfig(eta_init=8.0, eta_schedule="linear", max_iters=4)
    assert [lin.eta_at(i) for i in (1, 3, 5)] == [8.0, 4.0, 0.0]
    exp = ExperimentConfig(eta_init=8.0, eta_schedule="exponential", eta_decay=0.5)
    assert exp.eta_at(3) == 2.0


# ------------------------------------------------------------------- TRIRL

def test_gridworld_recovers_expert(grid5, expert5, run5):
    pol, _ = expert5
    assert run5.converged
    assert run5.records[-1].reverse_kl < 1e-3
    assert greedy_agreement(grid5.mdp, run5.final_policy, pol) == 1.0


def test_run_records_are_consistent(run5):
    recs = run5.records
    assert recs and recs[0].iter == 0
    assert run5.dual_violations == 0 and run5.kl_violations == 0
    for r in recs[1:]:
        assert r.eta >= 0 and r.reverse_kl >= 0
        assert r.epsilon_tr <= 0.6
        assert math.isclose(r.epsilon_tr, 0.6 / (1 + r.eta), rel_tol=1e-12)
        assert abs(r.alignment_lhs - r.alignment_rhs) <= 1e-8
        assert r.theorem1_residual <= 1e-6
    summary = run5.summary()
    assert summary["iterations"] == recs[-1].iter and summary["converged"]


def test_run_is_deterministic(grid5, expert5, run5):
    pol, occ = expert5
    again = run_trirl(grid5.mdp, occ, CFG, pol)
    assert again.records == run5.records
    assert np.array_equal(again.final_reward, run5.final_reward)


def test_uniform_expert_converges_immediately():
    p = np.zeros((2, 2, 2))
    p[0, :, 1] = p[1, :, 0] = 1.0
    mdp = TabularMdp(p, np.array([0.5, 0.5]), 0.9)
    uni = TabularPolicy.uniform(2, 2)
    res = run_trirl(mdp, compute_occupancy(mdp, uni), CFG, uni)
    assert res.converged and len(res.records) == 1
    assert res.records[0].reverse_kl < 1e-12


def test_fixture_runs_are_monotone(fixture_a, fixture_b):
    for env in (fixture_a, fixture_b):
        pol, occ = expert_for(env)
        res = run_trirl(env.mdp, occ, ExperimentConfig(record_time=False, max_iters=100), pol)
        assert res.dual_violations == 0 and res.kl_violations == 0


def test_count_violations():
    assert count_violations([1.0, 2.0, 1.5, 3.0], 1e-9, increasing=True) == 1
    assert count_violations([3.0, 2.0, 2.5], 1e-9, increasing=False) == 1
    assert count_violations([1.0], 0.0, increasing=True) == 0


# ---------------------------------------------------------------- variants

def test_zero_eta_schedule_equals_mce(grid5, expert5):
    pol, occ = expert5
    mce = run_mce_irl(grid5.mdp, occ, CFG, pol)
    trl = run_trirl(grid5.mdp, occ, ExperimentConfig(variant="tr_loss", eta_init=0.0, record_time=False), pol)
    assert len(mce.records) == len(trl.records)
    assert [r.rejected for r in mce.records] == [r.rejected for r in trl.records]
    assert np.abs(mce.final_reward - trl.final_reward).max() <= 1e-9
    # without rejections the two loops perform identical arithmetic
    first = next(i for i, r in enumerate(mce.records) if r.rejected)
    assert mce.records[:first] == trl.records[:first]


def test_constant_eta_ten_is_monotone(grid5, expert5):
    pol, occ = expert5
    res = run_trirl(grid5.mdp, occ, ExperimentConfig(variant="tr_loss", eta_init=10.0, record_time=False), pol)
    assert res.dual_violations == 0
    assert all(r.eta >= 10.0 for r in res.records[1:])


def test_huge_eta_is_slow_but_monotone(grid5, expert5):
    pol, occ = expert5
    cfg = ExperimentConfig(variant="tr_loss", eta_init=1e4, adaptive_radius=False, max_iters=30, record_time=False)
    res = run_trirl(grid5.mdp, occ, cfg, pol)
    assert all(r.epsilon_tr < 1e-4 for r in res.records[1:])
    assert res.dual_violations == 0
    assert res.records[-1].reverse_kl < res.records[0].reverse_kl


def test_retrospective_variant(grid5, expert5):
    pol, occ = expert5
    cfg = ExperimentConfig(variant="retrospective_eta", buffer_k=20, record_time=False)
    res = run_trirl(grid5.mdp, occ, cfg, pol)
    assert res.converged and res.dual_violations == 0
    assert greedy_agreement(grid5.mdp, res.final_policy, pol) == 1.0


def test_mce_baseline_converges(grid5, expert5):
    pol, occ = expert5
    res = run_mce_irl(grid5.mdp, occ, CFG, pol)
    assert res.converged and res.dual_violations == 0
    assert all(r.eta == 0.0 for r in res.records)


# --------------------------------------------------------------- ablations

@pytest.mark.parametrize("which", ABLATIONS)
def test_ablations_run_and_count(grid5, expert5, which):
    pol, occ = expert5
    cfg = ExperimentConfig(max_iters=40, record_time=False)
    a = run_ablation(grid5.mdp, occ, cfg, which, pol)
    b = run_ablation(grid5.mdp, occ, cfg, which, pol)
    assert a.kind == which
    assert a.records == b.records
    assert isinstance(a.dual_violations, int) and a.dual_violations >= 0


def test_unknown_ablation(grid5, expert5):
    with pytest.raises(ConfigError, match="'ablation'"):
        run_ablation(grid5.mdp, expert5[1], CFG, "nope")


def test_sampled_mode_needs_expert(fixture_a):
    _, occ = expert_for(fixture_a)
    with pytest.raises(ConfigError, match="'mode'"):
        run_trirl(fixture_a.mdp, occ, ExperimentConfig(mode="sampled"))


def test_sampled_mode_runs(fixture_a):
    pol, occ = expert_for(fixture_a)
    cfg = ExperimentConfig(mode="sampled", max_iters=5, n_samples=20_000, horizon=500, record_time=False)
    res = run_trirl(fixture_a.mdp, occ, cfg, pol)
    assert len(res.records) == 6
    assert all(np.isfinite(r.dual_value) for r in res.records)


# ---------------------------------------------------------------- transfer

def test_retrain_matches_trained(grid5, expert5):
    pol, occ = expert5
    trained, retrained, same = run_transfer(grid5.mdp, grid5.mdp, occ, CFG, expert_policy=pol)
    assert np.abs(retrained.final_policy.probs - trained.final_policy.probs).max() <= 1e-6
    assert np.array_equal(same.final_policy.probs, retrained.final_policy.probs)


def test_transfer_to_mirrored_grid(grid5, expert5):
    pol, occ = expert5
    flipped = grid5.mirrored()
    _, flip_occ = expert_for(flipped, 0)
    _, _, moved = run_transfer(grid5.mdp, flipped.mdp, occ, CFG, flip_occ, mirror_reward(grid5), pol)
    start = int(np.flatnonzero(flipped.mdp.initial_dist)[0])
    goals = {flipped.grid.state(c) for c in flipped.grid.goal_cells}
    assert greedy_path(flipped.mdp, moved.final_policy, start)[-1] in goals


def test_mirror_reward_matches_soft_optimum(grid5):
    r = grid5.expert_reward(0)
    f = mirror_reward(grid5)
    flipped = grid5.mirrored()
    sp, ap = grid5.grid.mirror_permutations()
    a = soft_value_iteration(grid5.mdp, r).policy.probs
    b = soft_value_iteration(flipped.mdp, f(r)).policy.probs
    assert np.allclose(b[np.ix_(sp, ap)], a, atol=1e-9)


def test_transfer_shape_mismatch(grid5, fixture_a, expert5):
    with pytest.raises(ValueError):
        run_transfer(grid5.mdp, fixture_a.mdp, expert5[1], CFG)


def test_greedy_path_stops_at_goal(grid5, expert5):
    path = greedy_path(grid5.mdp, expert5[0], 0)
    goals = {grid5.grid.state(c) for c in grid5.grid.goal_cells}
    assert path[0] == 0 and path[-1] in goals
    assert len(set(path)) == len(path)
