"""Environment semantics, GAE, PPO freeze and snapshot behavior."""

import math

import numpy as np
import pytest

from tendonsim.errors import ConfigError, IntegrationError
from tendonsim.plant import PlantConfig, fingertip_position
from tendonsim.rl import (EnvConfig, PolicyNet, PpoConfig, VecFingerEnv,
                          VecIdealSource, compute_gae, goal_position,
                          load_policy, make_vec_source, ppo_update,
                          sample_domain_params, save_policy, stairs_schedule,
                          train_policy)
from tendonsim.rl.env import DR_HIGH, DR_LOW, OBS_DIM, STATE_DIM
from tendonsim.estimators.optim import Adam


def small_env(n_envs=3, randomize=False, seed=0, **kw):
    cfg = EnvConfig(n_envs=n_envs, randomize=randomize, **kw)
    return VecFingerEnv(VecIdealSource(25.0), cfg=cfg, seed=seed)


def test_goal_position_endpoints():
    config = PlantConfig(kind="finger")
    straight = goal_position(0.0, config)
    l1, l2 = config.link_lengths
    assert np.allclose(straight, [l1 + l2, 0.0])
    curled = goal_position(math.pi / 2, config)
    assert np.allclose(curled, fingertip_position(
        config, np.array([math.pi / 2, math.pi / 2])))


def test_goal_arc_length():
    # quadrature along alpha -> tip(alpha, alpha); finite and smooth
    config = PlantConfig(kind="finger")
    alphas = np.linspace(0.0, math.pi / 2, 2001)
    pts = goal_position(alphas, config)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = float(seg.sum())
    l1, l2 = config.link_lengths
    # both joints sweep pi/2; the arc is shorter than the fully
    # unconstrained bound and longer than the endpoint chord
    chord = float(np.linalg.norm(pts[-1] - pts[0]))
    assert chord < arc < (l1 + 2 * l2) * (math.pi / 2)


def test_domain_params_bounds_and_mean():
    rng = np.random.default_rng(0)
    draws = np.array([[getattr(sample_domain_params(rng), f) for f in (
        "joint_friction_scale", "link_mass_scale", "spool_radius_scale",
        "joint_spring_scale")] for _ in range(4000)])
    assert draws.min() >= DR_LOW and draws.max() <= DR_HIGH
    assert np.allclose(draws.mean(axis=0), 1.0, atol=0.02)


def test_env_nominal_mode_uses_exact_plant_params():
    env = small_env(randomize=False)
    assert np.allclose(env.p["masses"], PlantConfig(kind="finger").link_masses)
    assert np.allclose(env.spool_radius, PlantConfig(kind="finger").spool_radius)


def test_env_randomized_params_within_bounds():
    env = small_env(n_envs=64, randomize=True)
    nominal = np.asarray(PlantConfig(kind="finger").link_masses)
    ratio = env.p["masses"] / nominal
    assert ratio.min() >= DR_LOW and ratio.max() <= DR_HIGH
    assert ratio.std() > 0.01


def test_env_action_clamp_and_theta_d():
    env = small_env()
    before = env._motor_state()[0].copy()
    env.step(np.array([5.0, -5.0, 0.1]))
    assert np.allclose(env.a_t, [0.2, -0.2, 0.1])
    # theta_d = theta + clamped action fed the ideal source
    assert env.history[:, -1, 2].tolist() == [0.2, -0.2, 0.1]
    assert before.shape == (3,)


def test_env_nonfinite_action_raises():
    env = small_env()
    with pytest.raises(IntegrationError):
        env.step(np.array([0.0, np.nan, 0.0]))


def test_env_reward_decomposition():
    env = small_env()
    action = np.array([0.05, 0.0, -0.02])
    _, reward, _ = env.step(action)
    tip = fingertip_position(env.nominal, env.q)
    dist = np.linalg.norm(tip - env.goal, axis=-1)
    expected = env.cfg.goal_weight * (-dist) \
        + env.cfg.smooth_weight * (-np.abs(env.a_t - env.a_prev))
    assert np.allclose(reward, expected, rtol=0, atol=0)


def test_env_zero_action_at_goal_zero_reward():
    env = small_env()
    # force alpha to the current (rest) tip pose so r_goal ~ 0
    env.alpha[:] = 0.0
    env.goal[:] = goal_position(0.0, env.nominal)
    _, reward, _ = env.step(np.zeros(3))
    assert np.all(np.abs(reward) < 0.05)


def test_env_episode_length_and_reset():
    env = small_env(episode_seconds=0.5)     # 10 steps
    for i in range(9):
        _, _, done = env.step(np.zeros(3))
        assert not done.any()
    alpha_before = env.alpha.copy()
    _, _, done = env.step(np.zeros(3))
    assert done.all()
    assert env.step_count.tolist() == [0, 0, 0]
    assert not np.allclose(env.alpha, alpha_before)
    assert len(env.completed_returns) == 3


def test_env_history_padding_on_reset():
    env = small_env()
    h = env.history
    assert h.shape == (3, 30, OBS_DIM)
    assert np.array_equal(h, np.tile(h[:, :1], (1, 30, 1)))
    assert env.observations().shape == (3, STATE_DIM)


def test_scripted_closing_reduces_goal_distance():
    env = small_env(n_envs=1)
    env.alpha[:] = 1.0
    env.goal[:] = goal_position(1.0, env.nominal)
    # constant action = constant force; q = (1, 1) is the static balance
    f_hold = env.nominal.joint_stiffness[0] * 1.0 / env.nominal.moment_arms[0]
    dists = []
    for _ in range(60):
        tip = fingertip_position(env.nominal, env.q)
        dists.append(float(np.linalg.norm(tip - env.goal)))
        env.step(np.full(1, f_hold / 25.0))
    assert dists[1] < dists[0] and dists[2] < dists[1]
    assert dists[-1] < 0.01 * dists[0]
    assert max(dists[-10:]) < 0.01 * dists[0]   # settled, not passing through


def test_gae_reduces_to_returns_when_lambda_gamma_one():
    rew = np.array([[1.0, 0.0, 2.0, -1.0, 3.0]])
    val = np.array([[0.5, 0.2, -0.3, 0.1, 0.4]])
    dones = np.array([[0.0, 0.0, 0.0, 0.0, 1.0]])
    adv, ret = compute_gae(rew, val, last_values=np.array([9.9]),
                           dones=dones, gamma=1.0, lam=1.0)
    empirical = np.cumsum(rew[0][::-1])[::-1]
    assert np.allclose(ret[0], empirical)
    assert np.allclose(adv[0], empirical - val[0])


def test_gae_done_cuts_bootstrap():
    rew = np.zeros((1, 3))
    val = np.zeros((1, 3))
    dones = np.array([[0.0, 1.0, 0.0]])
    adv, _ = compute_gae(rew, val, last_values=np.array([100.0]),
                         dones=dones, gamma=0.9, lam=1.0)
    # value after the done step leaks only into t=2, never across the reset
    assert adv[0, 2] == pytest.approx(90.0)
    assert adv[0, 0] == adv[0, 1] == 0.0


def zero_adv_batch(n=64):
    rng = np.random.default_rng(0)
    return {
        "obs": rng.standard_normal((n, STATE_DIM)).astype(np.float32),
        "actions": rng.standard_normal(n) * 0.05,
        "log_probs": rng.standard_normal(n),
        "advantages": np.zeros(n),
        "returns": rng.standard_normal(n),
    }


def test_zero_advantage_leaves_mean_net_unchanged():
    policy = PolicyNet(np.random.default_rng(0))
    opt = Adam(policy, lr=1e-3)
    before = {k: v.copy() for k, v in policy.named_parameters()}
    batch = zero_adv_batch()
    batch["log_probs"] = policy.log_prob(
        policy.forward_mean(batch["obs"]).astype(np.float64), batch["actions"])
    ppo_update(policy, opt, batch, PpoConfig(minibatches=2), np.random.default_rng(1))
    after = dict(policy.named_parameters())
    for name in before:
        if name.startswith("mean."):
            assert np.array_equal(before[name], after[name]), name
        else:
            assert not np.array_equal(before[name], after[name]), name


def test_log_std_frozen_through_updates_and_snapshots(tmp_path):
    policy = PolicyNet(np.random.default_rng(0), fixed_std=0.05)
    opt = Adam(policy, lr=1e-3)
    blob0 = policy.log_std.tobytes()
    rng = np.random.default_rng(2)
    for i in range(3):
        batch = zero_adv_batch()
        # actions must come from the sampling policy or the ratios are junk
        mean = policy.forward_mean(batch["obs"]).astype(np.float64)
        batch["actions"] = mean + policy.std * rng.standard_normal(64)
        batch["advantages"] = rng.standard_normal(64)
        batch["log_probs"] = policy.log_prob(mean, batch["actions"])
        ppo_update(policy, opt, batch, PpoConfig(minibatches=2), rng)
        path = tmp_path / f"snap{i}.ckpt"
        save_policy(policy, path)
        loaded, _ = load_policy(path)
        assert loaded.log_std.tobytes() == blob0
    assert policy.log_std.tobytes() == blob0
    assert "log_std" not in dict(policy.named_parameters())


def test_policy_snapshot_roundtrip(tmp_path):
    policy = PolicyNet(np.random.default_rng(5))
    save_policy(policy, tmp_path / "p.ckpt", meta={"note": "x"})
    loaded, meta = load_policy(tmp_path / "p.ckpt")
    assert meta["note"] == "x"
    obs = np.random.default_rng(1).standard_normal((4, STATE_DIM)).astype(np.float32)
    assert np.array_equal(policy.forward_mean(obs), loaded.forward_mean(obs))
    assert np.array_equal(policy.forward_value(obs), loaded.forward_value(obs))


def test_make_vec_source_rejects_surrogate():
    with pytest.raises(ConfigError, match="surrogate"):
        make_vec_source("surrogate", 4)


def test_stairs_schedule_structure():
    alpha, segment, values = stairs_schedule(dwell_s=0.5)
    assert np.allclose(np.diff(values[:6]), math.pi / 10)
    assert values[5] == pytest.approx(math.pi / 2)
    assert np.allclose(values, values[::-1])        # up then mirrored down
    assert len(alpha) == len(values) * 10           # dwell * control rate
    assert segment[0] == 0 and segment[-1] == len(values) - 1


def test_train_policy_smoke_improves_and_deterministic():
    cfg = PpoConfig(num_envs=4, horizon=32, total_updates=4, eval_every=2,
                    eval_envs=2, minibatches=2)
    p1, h1 = train_policy("ideal", cfg, seed=11, ideal_gain=25.0)
    p2, h2 = train_policy("ideal", cfg, seed=11, ideal_gain=25.0)
    assert h1["eval_return"] == h2["eval_return"]
    for (n1, a), (n2, b) in zip(p1.named_parameters(), p2.named_parameters()):
        assert n1 == n2 and np.array_equal(a, b)
    assert np.isfinite(h1["value_loss"]).all()
