"""Policy learning: vectorized finger environment, PPO, deployment."""

from tendonsim.rl.deploy import deploy_policy, stairs_schedule
from tendonsim.rl.env import (DomainParams, EnvConfig, VecFingerEnv,
                              VecIdealSource, VecLearnedSource, goal_position,
                              sample_domain_params)
from tendonsim.rl.policy import PolicyNet, load_policy, save_policy
from tendonsim.rl.ppo import (PpoConfig, compute_gae, evaluate_policy,
                              make_vec_source, ppo_update, train_policy)

__all__ = [
    "DomainParams", "EnvConfig", "VecFingerEnv", "VecIdealSource",
    "VecLearnedSource", "goal_position", "sample_domain_params",
    "PolicyNet", "load_policy", "save_policy",
    "PpoConfig", "compute_gae", "evaluate_policy", "make_vec_source",
    "ppo_update", "train_policy", "deploy_policy", "stairs_schedule",
]
