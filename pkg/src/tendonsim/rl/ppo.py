"""Proximal policy optimization with a clipped surrogate objective.

The exploration width is frozen: log_std lives outside the parameter
registry, the optimizer never sees it, and the update math never forms a
gradient for it. Rollouts come from the vectorized finger environment;
advantages use generalized advantage estimation.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from tendonsim.errors import ConfigError, IntegrationError
from tendonsim.estimators.optim import Adam
from tendonsim.rl.env import EnvConfig, VecFingerEnv, VecIdealSource, \
    VecLearnedSource
from tendonsim.rl.policy import PolicyNet, save_policy


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs_per_update: int = 4
    minibatches: int = 8
    num_envs: int = 64
    horizon: int = 128
    value_coef: float = 0.5
    lr: float = 3e-4
    total_updates: int = 2000
    fixed_std: float = 0.05
    eval_every: int = 10
    eval_envs: int = 8

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"ppo.gamma must be in [0, 1), got {self.gamma}")
        if self.clip_ratio <= 0:
            raise ConfigError(f"ppo.clip_ratio must be positive, got {self.clip_ratio}")
        if self.fixed_std <= 0:
            raise ConfigError(f"ppo.fixed_std must be positive, got {self.fixed_std}")


def compute_gae(rewards, values, last_values, dones, gamma: float, lam: float):
    """Advantages and returns over a (n_envs, horizon) rollout."""
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    dones = np.asarray(dones, np.float64)
    n, h = rewards.shape
    adv = np.zeros((n, h))
    next_adv = np.zeros(n)
    next_value = np.asarray(last_values, np.float64)
    for t in range(h - 1, -1, -1):
        live = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * next_value * live - values[:, t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[:, t] = next_adv
        next_value = values[:, t]
    return adv, adv + values


def ppo_update(policy: PolicyNet, opt: Adam, batch: dict, cfg: PpoConfig,
               rng) -> dict:
    """One clipped-surrogate update over the flattened rollout batch."""
    s = batch["obs"]
    a = batch["actions"]
    lp_old = batch["log_probs"]
    adv = batch["advantages"]
    ret = batch["returns"]
    n = len(s)

    center = adv - adv.mean()
    scale = center.std()
    adv_n = center / (scale + 1e-8)

    mb_size = max(1, n // cfg.minibatches)
    var = policy.std ** 2
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "clip_frac": 0.0}
    passes = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for lo in range(0, n, mb_size):
            idx = order[lo: lo + mb_size]
            sb, ab = s[idx], a[idx]
            advb, retb, lpb = adv_n[idx], ret[idx], lp_old[idx]
            m = len(idx)

            mean = policy.forward_mean(sb).astype(np.float64)
            lp = policy.log_prob(mean, ab)
            ratio = np.exp(lp - lpb)
            unclipped = ratio * advb
            clipped = np.clip(ratio, 1.0 - cfg.clip_ratio,
                              1.0 + cfg.clip_ratio) * advb
            policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))

            # gradient flows only through the unclipped branch of the min
            take = unclipped <= clipped
            dlp = np.where(take, -advb * ratio, 0.0) / m
            dmean = dlp * (ab - mean) / var

            v = policy.forward_value(sb).astype(np.float64)
            verr = v - retb
            value_loss = float(np.mean(verr * verr))
            dv = cfg.value_coef * 2.0 * verr / m

            loss = policy_loss + cfg.value_coef * value_loss
            if not math.isfinite(loss):
                raise IntegrationError(
                    f"ppo update diverged: policy_loss={policy_loss}, "
                    f"value_loss={value_loss}")

            policy.zero_grad()
            policy.backward_mean(dmean.astype(np.float32))
            policy.backward_value(dv.astype(np.float32))
            opt.step()

            stats["policy_loss"] += policy_loss
            stats["value_loss"] += value_loss
            stats["clip_frac"] += float(np.mean(~take))
            passes += 1

    for key in stats:
        stats[key] /= passes
    mean = policy.forward_mean(s).astype(np.float64)
    stats["approx_kl"] = float(np.mean(lp_old - policy.log_prob(mean, a)))
    return stats


def collect_rollout(env: VecFingerEnv, policy: PolicyNet, obs, rng,
                    cfg: PpoConfig):
    """Run ``horizon`` ticks in every env; returns (batch, last_obs, returns)."""
    n, h = env.cfg.n_envs, cfg.horizon
    buf_obs = np.zeros((n, h, obs.shape[-1]), np.float32)
    buf_act = np.zeros((n, h))
    buf_lp = np.zeros((n, h))
    buf_rew = np.zeros((n, h))
    buf_done = np.zeros((n, h))
    buf_val = np.zeros((n, h))

    for t in range(h):
        action, _, lp = policy.act(obs, rng)
        value = policy.forward_value(obs).astype(np.float64)
        buf_obs[:, t] = obs
        buf_act[:, t] = action
        buf_lp[:, t] = lp
        buf_val[:, t] = value
        obs, reward, done = env.step(action)
        buf_rew[:, t] = reward
        buf_done[:, t] = done

    finished = env.completed_returns
    env.completed_returns = []
    last_values = policy.forward_value(obs).astype(np.float64)
    adv, ret = compute_gae(buf_rew, buf_val, last_values, buf_done,
                           cfg.gamma, cfg.gae_lambda)
    batch = {
        "obs": buf_obs.reshape(n * h, -1),
        "actions": buf_act.reshape(-1),
        "log_probs": buf_lp.reshape(-1),
        "advantages": adv.reshape(-1),
        "returns": ret.reshape(-1),
    }
    return batch, obs, finished


def make_vec_source(kind: str, n_envs: int, model=None, ideal_gain=None):
    if kind == "ideal":
        if ideal_gain is None:
            raise ConfigError("ideal source needs a calibrated gain")
        return VecIdealSource(ideal_gain)
    if kind == "learned":
        if model is None:
            raise ConfigError("learned source needs an estimator model")
        return VecLearnedSource(model, n_envs)
    raise ConfigError(
        f"policy training accepts 'learned' or 'ideal' sources, got {kind!r}; "
        "the surrogate system is the held-out deployment target")


def evaluate_policy(policy: PolicyNet, source_kind: str, seed: int,
                    n_envs: int = 8, model=None, ideal_gain=None,
                    plant_config=None, env_cfg: EnvConfig | None = None) -> float:
    """Mean episode return on the nominal (un-randomized) environment."""
    base = env_cfg or EnvConfig()
    cfg = EnvConfig(**{**base.__dict__, "n_envs": n_envs, "randomize": False})
    source = make_vec_source(source_kind, n_envs, model, ideal_gain)
    env = VecFingerEnv(source, plant_config, cfg, seed=seed)
    obs = env.observations()
    total = np.zeros(n_envs)
    for _ in range(cfg.episode_steps):
        action = policy.forward_mean(obs).astype(np.float64)
        obs, reward, _ = env.step(action)
        total += reward
    return float(total.mean())


def train_policy(source_kind: str, cfg: PpoConfig | None = None, seed: int = 0,
                 model=None, ideal_gain=None, plant_config=None,
                 env_cfg: EnvConfig | None = None, log: bool = False,
                 snapshot_dir=None):
    """PPO training against the chosen force source.

    Returns (policy, history). The policy carries the parameters of the
    best periodic evaluation, not the final update. With ``snapshot_dir``
    set, a checkpoint is written at every periodic evaluation.
    """
    cfg = cfg or PpoConfig()
    cfg.validate()
    ss = np.random.SeedSequence(seed)
    s_init, s_env, s_act, s_shuf, s_eval = ss.spawn(5)

    base = env_cfg or EnvConfig()
    run_cfg = EnvConfig(**{**base.__dict__, "n_envs": cfg.num_envs})
    source = make_vec_source(source_kind, cfg.num_envs, model, ideal_gain)
    env = VecFingerEnv(source, plant_config, run_cfg, seed=s_env)

    policy = PolicyNet(np.random.default_rng(s_init), fixed_std=cfg.fixed_std)
    opt = Adam(policy, lr=cfg.lr)
    act_rng = np.random.default_rng(s_act)
    shuf_rng = np.random.default_rng(s_shuf)
    eval_seed = int(s_eval.generate_state(1)[0] % (2 ** 31))

    history = {"update": [], "policy_loss": [], "value_loss": [],
               "approx_kl": [], "episode_return": [], "eval_return": []}
    best = {"score": -math.inf, "params": None, "update": -1}
    obs = env.observations()
    t0 = time.monotonic()

    for update in range(cfg.total_updates):
        batch, obs, finished = collect_rollout(env, policy, obs, act_rng, cfg)
        stats = ppo_update(policy, opt, batch, cfg, shuf_rng)

        history["update"].append(update)
        history["policy_loss"].append(stats["policy_loss"])
        history["value_loss"].append(stats["value_loss"])
        history["approx_kl"].append(stats["approx_kl"])
        history["episode_return"].append(
            float(np.mean(finished)) if finished else math.nan)

        if stats["value_loss"] > 1e8:
            raise IntegrationError(
                f"value loss exploded at update {update}: {stats}")

        last = update == cfg.total_updates - 1
        if (update + 1) % cfg.eval_every == 0 or last:
            score = evaluate_policy(policy, source_kind, eval_seed,
                                    cfg.eval_envs, model, ideal_gain,
                                    plant_config, run_cfg)
            history["eval_return"].append((update, score))
            if snapshot_dir is not None:
                os.makedirs(snapshot_dir, exist_ok=True)
                save_policy(policy,
                            os.path.join(snapshot_dir,
                                         f"update_{update + 1:05d}.ckpt"),
                            meta={"source": source_kind, "update": update + 1})
            if score > best["score"]:
                best = {"score": score, "update": update,
                        "params": {k: v.copy()
                                   for k, v in policy.named_parameters()}}
            if log:
                print(f"update {update + 1:4d}/{cfg.total_updates}  "
                      f"eval {score:9.2f}  best {best['score']:9.2f}  "
                      f"vloss {stats['value_loss']:8.3f}")

    if best["params"] is not None:
        policy.set_parameters(best["params"])
    history["best_update"] = best["update"]
    history["best_eval_return"] = best["score"]
    history["wall_s"] = time.monotonic() - t0
    return policy, history
