"""Learning algorithms: adaptive dynamic programming and two martingale actor-critics."""
from .critics import Critic, TabularCritic
from .loop import (
    ALGORITHMS,
    EpochReport,
    TrainConfig,
    TrainingAborted,
    TrainResult,
    actor_paths,
    build_networks,
    policy_mse,
    train,
)
from .updates import (
    TargetUndefined,
    adp_actor_grad,
    adp_critic_grad,
    adp_exploratory_policy,
    adp_targets,
    draw_test_function,
    ml_critic_delta,
    mo_critic_delta,
    policy_delta,
    regularized_rewards,
)
