"""Vectorized fingertip-tracking environment.

Each environment instance is a two-link finger driven through a force
source at 20 Hz. The task: place the fingertip at the point reached when
both coupled joints sit at a target angle alpha. Observations are
5-vectors, the policy consumes a rolling history of the last k of them.
Plant parameters are re-randomized per episode when enabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tendonsim.errors import ConfigError, IntegrationError
from tendonsim.estimators.windows import HISTORY_LEN
from tendonsim.plant import PlantConfig, finger_accel, finger_param_arrays, \
    fingertip_position

OBS_DIM = 5            # theta, theta_dot, a_t, a_prev, alpha
HISTORY_K = 30
STATE_DIM = OBS_DIM * HISTORY_K

# fixed per-channel scale so every observation channel reaches the policy
# near unit range; baked into snapshots so deployment matches training
OBS_SCALE = np.array([2.5, 15.0, 0.2, 0.2, math.pi / 2])

DR_LOW, DR_HIGH = 0.7, 1.3


@dataclass
class DomainParams:
    joint_friction_scale: float = 1.0
    link_mass_scale: float = 1.0
    spool_radius_scale: float = 1.0
    joint_spring_scale: float = 1.0


def sample_domain_params(rng) -> DomainParams:
    draw = rng.uniform(DR_LOW, DR_HIGH, 4)
    return DomainParams(*map(float, draw))


def goal_position(alpha, config: PlantConfig):
    """Fingertip target: both coupled joints at ``alpha`` on the nominal arc."""
    alpha = np.asarray(alpha, float)
    q = np.stack([alpha, alpha], axis=-1)
    return fingertip_position(config, q)


@dataclass
class EnvConfig:
    n_envs: int = 64
    episode_seconds: float = 10.0
    action_limit: float = 0.2
    goal_weight: float = 10.0
    smooth_weight: float = 1.0
    randomize: bool = True
    control_rate_hz: int = 20
    sim_rate_hz: int = 400
    max_force: float = 21.0

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_seconds * self.control_rate_hz))


class VecIdealSource:
    """Batched proportional baseline."""

    kind = "ideal"

    def __init__(self, gain: float):
        self.gain = gain

    def reset_envs(self, idx):
        pass

    def forces(self, theta_d, theta, theta_dot):
        return np.maximum(self.gain * (theta_d - theta), 0.0)


class VecLearnedSource:
    """Batched estimator source with per-env observation windows."""

    kind = "learned"

    def __init__(self, model, n_envs: int):
        self.model = model
        self.n_envs = n_envs
        self._buf = np.zeros((n_envs, HISTORY_LEN, 3))
        self._fresh = np.ones(n_envs, dtype=bool)

    def reset_envs(self, idx):
        self._fresh[idx] = True

    def forces(self, theta_d, theta, theta_dot):
        rows = np.stack([theta_d, theta, theta_dot], axis=-1)
        fresh = self._fresh
        if fresh.any():
            self._buf[fresh] = rows[fresh, None, :]
            self._fresh[:] = False
        live = ~fresh
        if live.any():
            self._buf[live, :-1] = self._buf[live, 1:]
            self._buf[live, -1] = rows[live]
        return np.asarray(self.model.predict(self._buf), float)


class VecFingerEnv:
    """n_envs independent fingers stepped in lockstep."""

    def __init__(self, source, plant_config: PlantConfig | None = None,
                 cfg: EnvConfig | None = None, seed=0):
        self.cfg = cfg or EnvConfig()
        self.nominal = plant_config or PlantConfig(kind="finger")
        if self.nominal.kind != "finger":
            raise ConfigError("policy training requires the finger plant")
        if self.cfg.sim_rate_hz % self.cfg.control_rate_hz != 0:
            raise ConfigError("sim rate must be a multiple of the control rate")
        self.source = source
        self.rng = np.random.default_rng(seed)
        n = self.cfg.n_envs

        base = finger_param_arrays(self.nominal)
        # per-env copies of the randomized entries; the rest broadcast
        self.base = base
        self.p = {k: np.broadcast_to(v, (n,) + v.shape).copy()
                  for k, v in base.items()}
        self.spool_radius = np.full(n, self.nominal.spool_radius)

        self.q = np.zeros((n, 2))
        self.qd = np.zeros((n, 2))
        self.alpha = np.zeros(n)
        self.goal = np.zeros((n, 2))
        self.a_t = np.zeros(n)
        self.a_prev = np.zeros(n)
        self.step_count = np.zeros(n, dtype=int)
        self.history = np.zeros((n, HISTORY_K, OBS_DIM))
        self._ret_acc = np.zeros(n)
        self.completed_returns: list = []
        self._reset_envs(np.arange(n))

    # -- episode bookkeeping -------------------------------------------------

    def _reset_envs(self, idx):
        if len(idx) == 0:
            return
        n = len(idx)
        rest = np.asarray(self.nominal.rest_angles, float)
        self.q[idx] = rest
        self.qd[idx] = 0.0
        self.a_t[idx] = 0.0
        self.a_prev[idx] = 0.0
        self.step_count[idx] = 0
        self.alpha[idx] = self.rng.uniform(0.0, math.pi / 2, n)
        self.goal[idx] = goal_position(self.alpha[idx], self.nominal)

        if self.cfg.randomize:
            scales = self.rng.uniform(DR_LOW, DR_HIGH, (n, 4))
        else:
            scales = np.ones((n, 4))
        self.p["coulomb"][idx] = self.base["coulomb"] * scales[:, 0:1]
        self.p["damping"][idx] = self.base["damping"] * scales[:, 0:1]
        self.p["masses"][idx] = self.base["masses"] * scales[:, 1:2]
        self.spool_radius[idx] = self.nominal.spool_radius * scales[:, 2]
        self.p["stiffness"][idx] = self.base["stiffness"] * scales[:, 3:4]

        self.source.reset_envs(idx)
        obs = self._observation_row()
        self.history[idx] = obs[idx, None, :]

    def _motor_state(self):
        arms = self.p["arms"]
        rest = self.p["rest"]
        l = np.sum(arms * (self.q - rest), axis=-1)
        ldot = np.sum(arms * self.qd, axis=-1)
        return l / self.spool_radius, ldot / self.spool_radius

    def _observation_row(self):
        theta, theta_dot = self._motor_state()
        return np.stack([theta, theta_dot, self.a_t, self.a_prev,
                         self.alpha], axis=-1)

    def observations(self) -> np.ndarray:
        """Policy input: scaled history, flattened to (n, 150) float32."""
        return (self.history / OBS_SCALE).reshape(
            self.cfg.n_envs, STATE_DIM).astype(np.float32)

    # -- dynamics ------------------------------------------------------------

    def step(self, action: np.ndarray):
        """Apply one control tick; returns (obs, reward, done)."""
        action = np.asarray(action, float).reshape(self.cfg.n_envs)
        if not np.all(np.isfinite(action)):
            raise IntegrationError("policy produced a non-finite action")
        action = np.clip(action, -self.cfg.action_limit, self.cfg.action_limit)

        theta, theta_dot = self._motor_state()
        theta_d = theta + action
        force = self.source.forces(theta_d, theta, theta_dot)
        if not np.all(np.isfinite(force)):
            raise IntegrationError(
                f"{self.source.kind} force source produced non-finite force")
        force = np.clip(force, 0.0, self.cfg.max_force)

        dt = 1.0 / self.cfg.sim_rate_hz
        substeps = self.cfg.sim_rate_hz // self.cfg.control_rate_hz
        q, qd = self.q, self.qd
        for _ in range(substeps):
            acc = finger_accel(q, qd, force, **self.p)
            qd = qd + acc * dt
            q = q + qd * dt
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise IntegrationError("non-finite plant state in vectorized step")
        self.q, self.qd = q, qd

        self.a_prev = self.a_t
        self.a_t = action
        tip = fingertip_position(self.nominal, q)
        dist = np.linalg.norm(tip - self.goal, axis=-1)
        reward = self.cfg.goal_weight * (-dist) \
            + self.cfg.smooth_weight * (-np.abs(self.a_t - self.a_prev))

        self.step_count += 1
        done = self.step_count >= self.cfg.episode_steps
        self._ret_acc += reward
        if done.any():
            self.completed_returns.extend(self._ret_acc[done].tolist())
            self._ret_acc[done] = 0.0

        row = self._observation_row()
        self.history[:, :-1] = self.history[:, 1:]
        self.history[:, -1] = row
        self._reset_envs(np.flatnonzero(done))
        return self.observations(), reward, done
