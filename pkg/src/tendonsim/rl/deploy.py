"""Closed-loop policy deployment against the surrogate-real system.

Training never sees the surrogate servo; deployment runs the policy on
it with every nonlinearity enabled and nominal plant parameters. The
target schedule is a stairs profile of the arc angle alpha.
"""

from __future__ import annotations

import math

import numpy as np

from tendonsim.plant import PlantConfig, fingertip_position, make_plant_state, \
    motor_angle, tendon_velocity
from tendonsim.rl.env import EnvConfig, HISTORY_K, OBS_SCALE, goal_position
from tendonsim.servo import ServoConfig
from tendonsim.simforce import SurrogateSource, control_step


def stairs_schedule(increment: float = math.pi / 10, top: float = math.pi / 2,
                    dwell_s: float = 2.0, control_rate_hz: int = 20):
    """Alpha target per control tick: 0 up to ``top`` and back, fixed dwell.

    Returns (alpha_per_tick, segment_per_tick, segment_values).
    """
    n_up = int(round(top / increment))
    up = np.arange(n_up + 1) * increment
    values = np.concatenate([up, up[-2::-1]])
    per = int(round(dwell_s * control_rate_hz))
    alpha = np.repeat(values, per)
    segment = np.repeat(np.arange(len(values)), per)
    return alpha, segment, values


def deploy_policy(policy, alpha_ticks, plant_config: PlantConfig | None = None,
                  servo_config: ServoConfig | None = None, seed: int = 0,
                  env_cfg: EnvConfig | None = None) -> dict:
    """Roll the mean policy against the surrogate servo; returns a log."""
    cfg = env_cfg or EnvConfig()
    plant_config = plant_config or PlantConfig(kind="finger")
    source = SurrogateSource(servo_config or ServoConfig(), seed=seed)

    state = make_plant_state(plant_config)
    source.reset(state, plant_config)
    n_substeps = cfg.sim_rate_hz // cfg.control_rate_hz
    dt_control = 1.0 / cfg.control_rate_hz
    dt_sim = 1.0 / cfg.sim_rate_hz

    alpha_ticks = np.asarray(alpha_ticks, float)
    n = len(alpha_ticks)
    log = {k: np.zeros(n) for k in
           ("t", "alpha", "theta", "theta_d", "action", "force",
            "tip_x", "tip_y", "goal_x", "goal_y")}

    a_t = a_prev = 0.0
    theta = motor_angle(plant_config, state)
    theta_dot = float(tendon_velocity(plant_config, state.qd)) / plant_config.spool_radius
    history = np.tile([theta, theta_dot, a_t, a_prev, alpha_ticks[0] if n else 0.0],
                      (HISTORY_K, 1))

    for i in range(n):
        alpha = float(alpha_ticks[i])
        history[-1, 4] = alpha       # target can change mid-episode
        obs = (history / OBS_SCALE).reshape(1, -1).astype(np.float32)
        action = float(policy.forward_mean(obs)[0])
        action = min(max(action, -cfg.action_limit), cfg.action_limit)

        theta = motor_angle(plant_config, state)
        theta_d = theta + action
        state = control_step(source, state, plant_config, theta_d,
                             n_substeps, dt_sim, t=i * dt_control)

        tip = fingertip_position(plant_config, state.q)
        goal = goal_position(alpha, plant_config)
        log["t"][i] = i * dt_control
        log["alpha"][i] = alpha
        log["theta"][i] = theta
        log["theta_d"][i] = theta_d
        log["action"][i] = action
        log["force"][i] = source.last_force
        log["tip_x"][i], log["tip_y"][i] = tip[0], tip[1]
        log["goal_x"][i], log["goal_y"][i] = goal[0], goal[1]

        a_prev, a_t = a_t, action
        theta_new = motor_angle(plant_config, state)
        theta_dot = float(tendon_velocity(plant_config, state.qd)) / plant_config.spool_radius
        history[:-1] = history[1:]
        history[-1] = (theta_new, theta_dot, a_t, a_prev, alpha)
    return log
