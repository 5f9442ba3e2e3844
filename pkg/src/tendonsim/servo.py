"""Surrogate position-controlled servo winding a tendon spool.

Stands in for real actuator hardware: a PID position loop in the force
domain wrapped with the nonlinearities that make real tendon force hard
to predict from commands alone. Stribeck friction with an explicit stick
mode, command latency, gearbox backlash on the encoder path, encoder
quantization, velocity measurement noise, and output saturation.

With every nonlinearity disabled the servo collapses exactly to the
proportional law ``gain * (theta_d - theta)``, which is also the ideal
force baseline the learned estimators are compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from tendonsim.errors import ConfigError
from tendonsim.plant import (
    PlantConfig,
    PlantState,
    holding_force,
    tendon_excursion,
    tendon_velocity,
)

TWO_PI = 2.0 * math.pi


@dataclass
class ServoConfig:
    # position loop gains, force per rad of spool error
    kp: float = 30.0
    ki: float = 0.0
    kd: float = 0.5
    max_force: float = 21.0

    # Stribeck friction on the spool, in force units at the tendon
    coulomb_friction: float = 1.5
    stiction_extra: float = 2.5
    stribeck_velocity: float = 0.1
    viscous_friction: float = 0.4

    # measurement and command path
    latency_steps: int = 4
    backlash: float = 0.05
    encoder_quantization: float = TWO_PI / 4096.0
    velocity_noise_std: float = 0.01

    rate_hz: int = 80

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kp <= 0:
            raise ConfigError(f"servo.kp must be positive, got {self.kp}")
        if self.max_force <= 0:
            raise ConfigError(f"servo.max_force must be positive, got {self.max_force}")
        for name in ("ki", "kd", "coulomb_friction", "stiction_extra",
                     "viscous_friction", "backlash", "encoder_quantization",
                     "velocity_noise_std", "stribeck_velocity"):
            if getattr(self, name) < 0:
                raise ConfigError(f"servo.{name} must be >= 0, got {getattr(self, name)}")
        if self.latency_steps < 0 or int(self.latency_steps) != self.latency_steps:
            raise ConfigError(f"servo.latency_steps must be a non-negative int, got {self.latency_steps}")
        if self.rate_hz <= 0:
            raise ConfigError(f"servo.rate_hz must be positive, got {self.rate_hz}")

    @property
    def breakaway_force(self) -> float:
        return self.coulomb_friction + self.stiction_extra


@dataclass
class ServoState:
    """Mutable per-episode servo memory."""

    delay_line: tuple          # pending commands, oldest first, len latency+1
    integrator: float = 0.0
    play_pos: float = 0.0      # backlash play operator output, rad
    stuck: bool = False
    entry_pid: float = 0.0     # pid effort when the spool last stuck
    prev_omega: float = 0.0    # true spool rate last tick, for zero crossings
    last_force: float = 0.0
    rng: np.random.Generator | None = None


def make_servo_state(config: ServoConfig, theta0: float = 0.0,
                     initial_command: float | None = None,
                     seed=None) -> ServoState:
    """Fresh servo memory for an episode starting at spool angle theta0.

    The delay line is pre-filled with the initial command so the first
    ``latency_steps`` ticks execute it.
    """
    cmd = theta0 if initial_command is None else float(initial_command)
    line = (float(cmd),) * (config.latency_steps + 1)
    rng = np.random.default_rng(seed) if config.velocity_noise_std > 0 else None
    return ServoState(delay_line=line, play_pos=float(theta0), rng=rng)


def friction_force(velocity: float, config: ServoConfig) -> float:
    """Signed Stribeck friction at spool velocity ``velocity`` (rad/s)."""
    v = float(velocity)
    if v == 0.0:
        return 0.0
    if config.stribeck_velocity > 0:
        stribeck = config.stiction_extra * math.exp(-((v / config.stribeck_velocity) ** 2))
    else:
        stribeck = 0.0
    mag = config.coulomb_friction + stribeck + config.viscous_friction * abs(v)
    return math.copysign(mag, v)


def quantize(value: float, step: float) -> float:
    """Round to the nearest multiple of ``step``; identity for step <= 0."""
    if step <= 0:
        return value
    return math.floor(value / step + 0.5) * step


def backlash_play(position: float, play_state: float, width: float) -> float:
    """One step of the play (dead zone) operator with total width ``width``.

    The output follows the input only once the input has dragged it to the
    edge of a +-width/2 window; inside the window it stays put.
    """
    if width <= 0:
        return position
    half = 0.5 * width
    return min(max(play_state, position - half), position + half)


def servo_step(state: ServoState, config: ServoConfig, theta_d: float,
               plant_state: PlantState, plant_config: PlantConfig,
               dt: float, t: float = 0.0, obstacles=()):
    """Advance the servo one control tick.

    Returns ``(force, theta_meas, omega_meas)``: the tendon force applied
    over the coming tick and the encoder measurements the outside world
    (loggers, estimators, policies) gets to see. Mutates ``state``.
    ``t`` and ``obstacles`` describe the plant-side contact situation so a
    stuck spool can hold against it.
    """
    # command latency: the executed command entered the line latency ticks ago
    line = state.delay_line[1:] + (float(theta_d),)
    state.delay_line = line
    cmd = line[0]

    # measurement path: true spool angle -> backlash play -> quantization
    l = float(tendon_excursion(plant_config, plant_state.q))
    ldot = float(tendon_velocity(plant_config, plant_state.qd))
    r = plant_config.spool_radius
    theta_raw = l / r
    omega_raw = ldot / r

    play = backlash_play(theta_raw, state.play_pos, config.backlash)
    omega_play = (play - state.play_pos) / dt
    state.play_pos = play

    theta_meas = quantize(play, config.encoder_quantization)
    omega_meas = omega_play
    if config.velocity_noise_std > 0:
        omega_meas = omega_meas + config.velocity_noise_std * state.rng.standard_normal()

    # PID in the force domain, derivative on the measurement
    err = cmd - theta_meas
    integ = state.integrator + err * dt
    pid = config.kp * err + config.ki * integ - config.kd * omega_meas

    # conditional anti-windup: do not integrate further into saturation
    if config.ki > 0 and not (0.0 <= pid <= config.max_force):
        if (pid > config.max_force and err > 0) or (pid < 0.0 and err < 0):
            integ = state.integrator
            pid = config.kp * err + config.ki * integ - config.kd * omega_meas
    state.integrator = integ

    # stick-slip: a stuck spool kinematically freezes the tendon, so the
    # output becomes the constraint tension holding the load in place.
    # Static friction budgets the deviation of the pid effort from its
    # value at entry; past breakaway the spool slips again.
    breakaway = config.breakaway_force
    v_entry = 0.5 * config.stribeck_velocity
    v_exit = 10.0 * config.stribeck_velocity

    if state.stuck:
        if abs(pid - state.entry_pid) > breakaway or abs(omega_raw) > v_exit:
            state.stuck = False

    # entry on a velocity zero crossing (or near standstill) while the pid
    # effort sits within the static friction budget of the held tension
    crossing = omega_raw * state.prev_omega <= 0.0 or abs(omega_raw) < v_entry
    if not state.stuck and breakaway > 0 and crossing \
            and abs(pid - plant_state.tendon_tension) <= breakaway:
        state.stuck = True
        state.entry_pid = pid
    state.prev_omega = omega_raw

    if state.stuck:
        force = holding_force(plant_state, plant_config, t=t, obstacles=obstacles)
    else:
        force = pid - friction_force(omega_raw, config)

    force = min(max(force, 0.0), config.max_force)
    state.last_force = force
    return force, theta_meas, omega_meas


def ideal_force(theta_d, theta, gain: float, clamp: bool = True):
    """Proportional force baseline ``gain * (theta_d - theta)``.

    ``clamp`` keeps the prediction at or above zero, matching a tendon
    that can only pull. Broadcasts over array inputs.
    """
    f = gain * (theta_d - theta)
    if clamp:
        f = np.maximum(f, 0.0)
    return f
