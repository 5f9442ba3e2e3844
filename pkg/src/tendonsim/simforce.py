"""Force sources that drive the plant at control rate.

Deployment scheme: once per 20 Hz control tick the source observes
(theta_d, theta, theta_dot) computed from the tendon state, produces a
single tendon force, and that force is held constant across every
simulation substep of the tick. The surrogate source is the exception:
it is the ground-truth reference system, so inside each control tick it
runs its native 80 Hz servo loop instead of holding one value.
"""

from __future__ import annotations

import collections
import math

import numpy as np

from tendonsim.datagen import LOG_RATE_HZ, SIM_RATE_HZ, TrajectorySpec, \
    gen_trajectory, make_system, run_episode
from tendonsim.errors import IntegrationError
from tendonsim.estimators.windows import HISTORY_LEN
from tendonsim.plant import PlantConfig, PlantState, fingertip_position, \
    make_plant_state, motor_angle, step_plant, tendon_velocity
from tendonsim.servo import ServoConfig, ideal_force, make_servo_state, servo_step

CONTROL_RATE_HZ = 20
DEFAULT_MAX_FORCE = ServoConfig().max_force


class IdealSource:
    """Proportional force baseline: F = P * (theta_d - theta)."""

    kind = "ideal"

    def __init__(self, gain: float, max_force: float = DEFAULT_MAX_FORCE,
                 clamp: bool = True):
        if gain <= 0:
            raise ValueError(f"ideal gain must be positive, got {gain}")
        self.gain = gain
        self.max_force = max_force
        self.clamp = clamp
        self.last_force = 0.0

    def reset(self, state: PlantState, config: PlantConfig):
        pass

    def force(self, theta_d: float, theta: float, theta_dot: float) -> float:
        return float(ideal_force(theta_d, theta, self.gain, clamp=self.clamp))


class LearnedSource:
    """Estimator-driven source with a control-rate observation window."""

    kind = "learned"

    def __init__(self, model, max_force: float = DEFAULT_MAX_FORCE):
        self.model = model
        self.max_force = max_force
        self.last_force = 0.0
        self._buf = None

    def reset(self, state: PlantState, config: PlantConfig):
        self._buf = None

    def force(self, theta_d: float, theta: float, theta_dot: float) -> float:
        row = (theta_d, theta, theta_dot)
        if self._buf is None:
            # cold start: the first observation fills the whole window
            self._buf = collections.deque([row] * HISTORY_LEN,
                                          maxlen=HISTORY_LEN)
        else:
            self._buf.append(row)
        window = np.asarray(self._buf, float)
        return float(self.model.predict(window))


class SurrogateSource:
    """Ground-truth reference: the full servo model at its native rate.

    Used for the gap experiments only; never mixed with the learned
    source inside one training environment.
    """

    kind = "surrogate"

    def __init__(self, servo_config: ServoConfig | None = None, seed=None):
        self.config = servo_config or ServoConfig()
        self.max_force = self.config.max_force
        self.seed = seed
        self.last_force = 0.0
        self.state = None

    def reset(self, state: PlantState, config: PlantConfig):
        theta0 = motor_angle(config, state)
        self.state = make_servo_state(self.config, theta0=theta0,
                                      seed=self.seed)


def control_step(source, state: PlantState, config: PlantConfig,
                 theta_d: float, n_substeps: int = SIM_RATE_HZ // CONTROL_RATE_HZ,
                 dt_sim: float = 1.0 / SIM_RATE_HZ, t: float = 0.0,
                 obstacles=()) -> PlantState:
    """Advance the plant through one control tick under ``source``."""
    if source.kind == "surrogate":
        return _surrogate_tick(source, state, config, theta_d,
                               n_substeps, dt_sim, t, obstacles)

    theta = motor_angle(config, state)
    theta_dot = float(tendon_velocity(config, state.qd)) / config.spool_radius
    force = source.force(float(theta_d), theta, theta_dot)
    if not math.isfinite(force):
        raise IntegrationError(
            f"{source.kind} force source produced non-finite force {force!r} at t={t:.3f}")
    force = min(max(force, 0.0), source.max_force)
    source.last_force = force
    for k in range(n_substeps):
        state = step_plant(state, config, force, dt_sim,
                           t=t + k * dt_sim, obstacles=obstacles)
    return state


def _surrogate_tick(source, state, config, theta_d, n_substeps, dt_sim, t,
                    obstacles):
    dt_servo = 1.0 / source.config.rate_hz
    n_servo = int(round(n_substeps * dt_sim * source.config.rate_hz))
    sub = n_substeps // max(n_servo, 1)
    first = None
    for j in range(n_servo):
        tj = t + j * dt_servo
        force, _, _ = servo_step(source.state, source.config, float(theta_d),
                                 state, config, dt_servo, t=tj,
                                 obstacles=obstacles)
        if first is None:
            first = force
        for k in range(sub):
            state = step_plant(state, config, force, dt_sim,
                               t=tj + k * dt_sim, obstacles=obstacles)
    source.last_force = first if first is not None else 0.0
    return state


def replay_open_loop(sources: dict, config: PlantConfig, theta_d,
                     control_rate_hz: int = CONTROL_RATE_HZ,
                     sim_rate_hz: int = SIM_RATE_HZ, obstacles=()) -> dict:
    """Run the same command trajectory through each source.

    Every source starts from an identical plant state. Returns one trace
    per source, sampled at the control tick starts, with the same channel
    names the episode CSV uses.
    """
    theta_d = np.asarray(theta_d, float)
    n_substeps = sim_rate_hz // control_rate_hz
    dt_control = 1.0 / control_rate_hz
    dt_sim = 1.0 / sim_rate_hz
    n = len(theta_d)

    traces = {}
    for name, source in sources.items():
        state = make_plant_state(config)
        source.reset(state, config)
        cols = {k: np.zeros(n) for k in
                ("t", "theta_d", "theta", "theta_dot", "F_load",
                 "q1", "q2", "tip_x", "tip_y")}
        for i in range(n):
            cols["t"][i] = i * dt_control
            cols["theta_d"][i] = theta_d[i]
            cols["theta"][i] = motor_angle(config, state)
            cols["theta_dot"][i] = float(
                tendon_velocity(config, state.qd)) / config.spool_radius
            cols["q1"][i] = state.q[0]
            if config.kind == "finger":
                cols["q2"][i] = state.q[1]
                tip = fingertip_position(config, state.q)
                cols["tip_x"][i], cols["tip_y"][i] = tip[0], tip[1]
            state = control_step(source, state, config, float(theta_d[i]),
                                 n_substeps, dt_sim, t=i * dt_control,
                                 obstacles=obstacles)
            cols["F_load"][i] = source.last_force
        traces[name] = cols
    return traces


def calibrate_ideal_gain(system: str = "finger", seed: int = 0,
                         n_episodes: int = 4, duration_s: float = 10.0,
                         min_error: float = 0.02) -> float:
    """Least-squares fit of F = P * (theta_d - theta) on surrogate ramps.

    Only samples where the command leads the spool by more than
    ``min_error`` rad enter the fit, so the zero-force clamp region does
    not bias the slope.
    """
    plant_cfg, servo_cfg = make_system(system)
    num = den = 0.0
    for k in range(n_episodes):
        spec = TrajectorySpec("ramp", duration_s, seed=seed * 1000 + k)
        theta_d = gen_trajectory(spec, rate_hz=LOG_RATE_HZ)
        log = run_episode(plant_cfg, servo_cfg, theta_d, seed=seed * 1000 + k,
                          loadcell_noise_std=0.0)
        err = log["theta_d"] - log["theta"]
        keep = err > min_error
        num += float(np.dot(err[keep], log["force"][keep]))
        den += float(np.dot(err[keep], err[keep]))
    if den == 0.0:
        raise IntegrationError("calibration ramps never loaded the tendon")
    return num / den
