"""Trust-region inverse reinforcement learning on tabular MDPs."""

from trirl._backend import BACKEND
from trirl.density import (
    DiscBuffer,
    RatioProvider,
    Trajectory,
    buffer_corrected_reward,
    buffer_intermediate_reward,
    buffer_push,
    empirical_occupancy,
    recompute_etas_retrospective,
    sample_trajectories,
    train_logistic_discriminator,
    unlimited_history_reward,
)
from trirl.driver import (
    ConfigError,
    ExperimentConfig,
    IterationRecord,
    RunResult,
    expert_for,
    greedy_agreement,
    run_ablation,
    run_mce_irl,
    run_tr_loss_variant,
    run_transfer,
    run_trirl,
)
from trirl.mdp import (
    Environment,
    GridworldSpec,
    Occupancy,
    TabularMdp,
    TabularPolicy,
    build_gridworld,
    compute_occupancy,
    expected_policy_kl,
    load_environment,
    policy_from_occupancy,
    shipped_environments,
)
from trirl.reward import (
    alignment_check,
    correct_reward,
    dual_gradient,
    dual_objective,
    log_density_ratio_exact,
    reverse_kl,
    reward_update,
)
from trirl.solver import SolverError, lemma1_transform, soft_value_iteration, solve_trust_region
from trirl.trpl import GaussianParams, kl_decompose, project, project_cov, project_mean

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
