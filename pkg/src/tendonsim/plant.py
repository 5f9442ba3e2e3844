"""Rigid-body load models driven by a single tendon force.

Two load kinds share one stepping interface:

* ``spring_mass``: a translational mass against a linear return spring,
  the bench rig used for calibration and most data collection.
* ``finger``: a planar two-joint linkage with torsional return springs,
  one tendon routed over both joints.

All dynamics helpers broadcast over leading batch dimensions so the same
math serves the scalar data-generation loop and vectorized RL rollouts.
Angles are rad, lengths m, forces N, torques N*m.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from tendonsim.errors import ConfigError, IntegrationError

# Velocity scale for the smooth Coulomb friction profile, rad/s. Must keep
# the friction slope stable under explicit stepping: coulomb/eps * dt / I < 2
# for the smallest effective joint inertia, otherwise the joint chatters at
# rest. The distal joint's coupled inertia is ~3e-6 kg*m^2, which forces a
# wide regularization band at 400 Hz (checked against worst-case domain
# randomization: friction and damping x1.3, masses x0.7).
FRICTION_VEL_EPS = 1.0

# Joint-limit contact model: stiff unilateral spring plus damping that only
# acts while moving further into the stop. Values keep the contact frequency
# inside the stable region of semi-implicit Euler at 400 Hz.
LIMIT_STIFFNESS = 0.5
LIMIT_DAMPING = 0.01

PLANT_KINDS = ("spring_mass", "finger")


@dataclass
class Obstacle:
    """Unilateral torsional stop that blocks one joint past a given angle.

    Active only inside the [t_start, t_end) window, which lets an episode
    script place and remove a rigid block mid-trajectory.
    """

    joint: int
    angle: float
    stiffness: float = 2.0
    damping: float = 0.02
    t_start: float = 0.0
    t_end: float = math.inf

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


@dataclass
class PlantConfig:
    kind: str = "spring_mass"
    spool_radius: float = 0.0125

    # spring_mass parameters
    stiffness: float = 150.0
    mass: float = 1.0
    damping: float = 4.0

    # finger parameters, one entry per joint (proximal, distal)
    link_lengths: tuple = (0.05, 0.04)
    link_masses: tuple = (0.02, 0.02)
    # bearing, spool routing and soft-tissue inertia at each joint axis;
    # keeps the mass matrix well conditioned under tension steps
    joint_inertia: tuple = (5e-5, 5e-5)
    moment_arms: tuple = (0.012, 0.012)
    joint_stiffness: tuple = (0.05, 0.05)
    joint_damping: tuple = (0.0005, 0.0005)
    joint_coulomb: tuple = (0.0005, 0.0005)
    joint_limits: tuple = ((-0.2, 1.65), (-0.2, 1.65))
    rest_angles: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.validate()

    @property
    def n_coords(self) -> int:
        return 1 if self.kind == "spring_mass" else 2

    def validate(self):
        if self.kind not in PLANT_KINDS:
            raise ConfigError(f"plant.kind must be one of {PLANT_KINDS}, got {self.kind!r}")
        if not self.spool_radius > 0:
            raise ConfigError(f"plant.spool_radius must be positive, got {self.spool_radius}")
        if self.kind == "spring_mass":
            for name in ("stiffness", "mass"):
                if not getattr(self, name) > 0:
                    raise ConfigError(f"plant.{name} must be positive, got {getattr(self, name)}")
            if self.damping < 0:
                raise ConfigError(f"plant.damping must be >= 0, got {self.damping}")
        else:
            for name in ("link_lengths", "link_masses", "moment_arms", "joint_stiffness"):
                vals = getattr(self, name)
                if len(vals) != 2 or any(not v > 0 for v in vals):
                    raise ConfigError(f"plant.{name} must be two positive values, got {vals}")
            for name in ("joint_damping", "joint_coulomb", "joint_inertia"):
                vals = getattr(self, name)
                if len(vals) != 2 or any(v < 0 for v in vals):
                    raise ConfigError(f"plant.{name} must be two non-negative values, got {vals}")
            for lo, hi in self.joint_limits:
                if not lo < hi:
                    raise ConfigError(f"plant.joint_limits must satisfy lo < hi, got {self.joint_limits}")


@dataclass
class PlantState:
    """Generalized coordinates plus the tension applied on the last step.

    ``q`` is joint angles (rad) for the finger or extension (m) for the
    spring-mass rig. ``tendon_tension`` is what an inline load cell reads.
    """

    q: np.ndarray
    qd: np.ndarray
    tendon_tension: float = 0.0

    def copy(self) -> "PlantState":
        return PlantState(self.q.copy(), self.qd.copy(), self.tendon_tension)


def make_plant_state(config: PlantConfig, q0=None, qd0=None) -> PlantState:
    n = config.n_coords
    if q0 is None:
        q0 = np.zeros(n) if config.kind == "spring_mass" else np.asarray(config.rest_angles, float)
    q = np.array(q0, dtype=float).reshape(n)
    qd = np.zeros(n) if qd0 is None else np.array(qd0, dtype=float).reshape(n)
    return PlantState(q, qd, 0.0)


# ---------------------------------------------------------------------------
# tendon geometry


def tendon_excursion(config: PlantConfig, q: np.ndarray):
    """Tendon length drawn onto the spool for configuration ``q``."""
    q = np.asarray(q, float)
    if config.kind == "spring_mass":
        return q[..., 0]
    arms = np.asarray(config.moment_arms, float)
    rest = np.asarray(config.rest_angles, float)
    return np.sum(arms * (q - rest), axis=-1)


def tendon_velocity(config: PlantConfig, qd: np.ndarray):
    qd = np.asarray(qd, float)
    if config.kind == "spring_mass":
        return qd[..., 0]
    arms = np.asarray(config.moment_arms, float)
    return np.sum(arms * qd, axis=-1)


def tendon_to_motor(config: PlantConfig, l, ldot):
    """Map tendon excursion and rate to spool angle and angular rate."""
    r = config.spool_radius
    return np.asarray(l, float) / r, np.asarray(ldot, float) / r


def motor_angle(config: PlantConfig, state: PlantState) -> float:
    l = tendon_excursion(config, state.q)
    return float(l) / config.spool_radius


def fingertip_position(config: PlantConfig, q: np.ndarray):
    """Planar forward kinematics; returns (..., 2) xy in meters."""
    q = np.asarray(q, float)
    l1, l2 = config.link_lengths
    a1 = q[..., 0]
    a12 = q[..., 0] + q[..., 1]
    x = l1 * np.cos(a1) + l2 * np.cos(a12)
    y = l1 * np.sin(a1) + l2 * np.sin(a12)
    return np.stack([x, y], axis=-1)


def joint_spring_torque(config: PlantConfig, q: np.ndarray):
    k = np.asarray(config.joint_stiffness, float)
    rest = np.asarray(config.rest_angles, float)
    return -k * (np.asarray(q, float) - rest)


def load_cell_reading(state: PlantState) -> float:
    """Series load-cell signal: the tension currently carried by the tendon."""
    return float(state.tendon_tension)


# ---------------------------------------------------------------------------
# dynamics cores (broadcast over leading dims)


def springmass_accel(x, xd, tension, stiffness, mass, damping):
    return (tension - stiffness * x - damping * xd) / mass


def _limit_torque(q, qd, lo, hi):
    below = np.minimum(q - lo, 0.0)
    above = np.maximum(q - hi, 0.0)
    tau = -LIMIT_STIFFNESS * (below + above)
    # damping only while penetrating further in
    tau = tau - LIMIT_DAMPING * qd * ((above > 0) & (qd > 0))
    tau = tau - LIMIT_DAMPING * qd * ((below < 0) & (qd < 0))
    return tau


def finger_accel(q, qd, tension, lengths, masses, inertia, arms, stiffness,
                 damping, coulomb, rest, limits_lo, limits_hi, extra_torque=None):
    """Joint accelerations for the planar two-link finger.

    ``q``/``qd`` are (..., 2); ``tension`` is (...,). Per-joint parameter
    arrays are (2,) or broadcastable to (..., 2), which is how domain
    randomization feeds per-environment values.
    """
    q = np.asarray(q, float)
    qd = np.asarray(qd, float)
    tension = np.asarray(tension, float)

    l1 = lengths[..., 0]
    l2 = lengths[..., 1]
    m1 = masses[..., 0]
    m2 = masses[..., 1]
    lc1, lc2 = 0.5 * l1, 0.5 * l2
    i1 = m1 * l1 * l1 / 12.0
    i2 = m2 * l2 * l2 / 12.0

    c2 = np.cos(q[..., 1])
    m11 = m1 * lc1 ** 2 + i1 + m2 * (l1 ** 2 + lc2 ** 2 + 2.0 * l1 * lc2 * c2) \
        + i2 + inertia[..., 0]
    m12 = m2 * (lc2 ** 2 + l1 * lc2 * c2) + i2
    m22 = m2 * lc2 ** 2 + i2 + inertia[..., 1]

    h = m2 * l1 * lc2 * np.sin(q[..., 1])
    qd1, qd2 = qd[..., 0], qd[..., 1]
    cor1 = -h * qd2 * (2.0 * qd1 + qd2)
    cor2 = h * qd1 * qd1

    tau = arms * tension[..., None]
    tau = tau - stiffness * (q - rest)
    tau = tau - damping * qd
    tau = tau - coulomb * np.tanh(qd / FRICTION_VEL_EPS)
    tau = tau + _limit_torque(q, qd, limits_lo, limits_hi)
    if extra_torque is not None:
        tau = tau + extra_torque

    rhs1 = tau[..., 0] - cor1
    rhs2 = tau[..., 1] - cor2
    det = m11 * m22 - m12 * m12
    qdd1 = (m22 * rhs1 - m12 * rhs2) / det
    qdd2 = (m11 * rhs2 - m12 * rhs1) / det
    return np.stack([qdd1, qdd2], axis=-1)


def finger_param_arrays(config: PlantConfig):
    """Per-joint parameter arrays in the order finger_accel expects."""
    limits = np.asarray(config.joint_limits, float)
    return dict(
        lengths=np.asarray(config.link_lengths, float),
        masses=np.asarray(config.link_masses, float),
        inertia=np.asarray(config.joint_inertia, float),
        arms=np.asarray(config.moment_arms, float),
        stiffness=np.asarray(config.joint_stiffness, float),
        damping=np.asarray(config.joint_damping, float),
        coulomb=np.asarray(config.joint_coulomb, float),
        rest=np.asarray(config.rest_angles, float),
        limits_lo=limits[:, 0],
        limits_hi=limits[:, 1],
    )


def _mass_entries(c2: float, p: dict):
    """Scalar mass-matrix entries (m11, m12, m22) at cos(q2) = c2."""
    l1 = p["lengths"][0]
    m1, m2 = p["masses"]
    lc1, lc2 = 0.5 * p["lengths"][0], 0.5 * p["lengths"][1]
    i1 = m1 * p["lengths"][0] ** 2 / 12.0
    i2 = m2 * p["lengths"][1] ** 2 / 12.0
    m11 = m1 * lc1 ** 2 + i1 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * c2) \
        + i2 + p["inertia"][0]
    m12 = m2 * (lc2 ** 2 + l1 * lc2 * c2) + i2
    m22 = m2 * lc2 ** 2 + i2 + p["inertia"][1]
    return m11, m12, m22


def obstacle_torque(obstacles, q, qd, t: float):
    """Summed contact torque from every active obstacle, shape (..., 2)."""
    q = np.asarray(q, float)
    tau = np.zeros(q.shape)
    for ob in obstacles:
        if not ob.active(t):
            continue
        pen = np.maximum(q[..., ob.joint] - ob.angle, 0.0)
        contact = pen > 0
        tq = -ob.stiffness * pen - ob.damping * qd[..., ob.joint] * (contact & (qd[..., ob.joint] > 0))
        tau[..., ob.joint] += tq
    return tau


# ---------------------------------------------------------------------------
# stepping


def step_plant(state: PlantState, config: PlantConfig, tension: float, dt: float,
               t: float = 0.0, obstacles=()) -> PlantState:
    """Advance one semi-implicit Euler step under a held tendon tension.

    Velocity is updated from accelerations at the current configuration,
    then position is updated with the new velocity. Raises
    IntegrationError if the state leaves the finite range.
    """
    q, qd = state.q, state.qd
    if config.kind == "spring_mass":
        acc = springmass_accel(q[0], qd[0], tension, config.stiffness,
                               config.mass, config.damping)
        acc = np.array([acc])
    else:
        extra = obstacle_torque(obstacles, q, qd, t) if obstacles else None
        acc = finger_accel(q, qd, tension, extra_torque=extra,
                           **finger_param_arrays(config))
    qd_new = qd + acc * dt
    q_new = q + qd_new * dt
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise IntegrationError(
            f"non-finite plant state at t={t:.4f}: q={q_new}, qd={qd_new}")
    return PlantState(q_new, qd_new, float(tension))


def holding_force(state: PlantState, config: PlantConfig, t: float = 0.0,
                  obstacles=(), creep_tau: float = 0.025) -> float:
    """Tension that keeps the tendon excursion frozen at its current value.

    Used while the servo spool is stuck: an inextensible tendon on a stuck
    spool kinematically locks the excursion, and the tension becomes the
    constraint force. Solves for the tension giving ``l_dotdot = -l_dot /
    creep_tau``, which also bleeds off any residual creep velocity.
    """
    q, qd = state.q, state.qd
    if config.kind == "spring_mass":
        x, xd = q[0], qd[0]
        return float(config.stiffness * x + config.damping * xd
                     - config.mass * xd / creep_tau)

    p = finger_param_arrays(config)
    a = p["arms"]
    m11, m12, m22 = _mass_entries(math.cos(q[1]), p)
    det = m11 * m22 - m12 * m12

    l1 = p["lengths"][0]
    m2 = p["masses"][1]
    lc2 = 0.5 * p["lengths"][1]
    h = m2 * l1 * lc2 * math.sin(q[1])
    cor = np.array([-h * qd[1] * (2.0 * qd[0] + qd[1]), h * qd[0] * qd[0]])

    tau_p = -p["stiffness"] * (q - p["rest"]) - p["damping"] * qd
    tau_p = tau_p - p["coulomb"] * np.tanh(qd / FRICTION_VEL_EPS)
    tau_p = tau_p + _limit_torque(q, qd, p["limits_lo"], p["limits_hi"])
    if obstacles:
        tau_p = tau_p + obstacle_torque(obstacles, q, qd, t)

    def minv(v):
        return np.array([(m22 * v[0] - m12 * v[1]) / det,
                         (m11 * v[1] - m12 * v[0]) / det])

    ldd_target = -float(np.sum(a * qd)) / creep_tau
    num = ldd_target - float(a @ minv(tau_p - cor))
    den = float(a @ minv(a))
    return num / den


def mechanical_energy(state: PlantState, config: PlantConfig) -> float:
    """Kinetic plus elastic potential energy of the load (no gravity)."""
    q, qd = state.q, state.qd
    if config.kind == "spring_mass":
        ke = 0.5 * config.mass * qd[0] ** 2
        pe = 0.5 * config.stiffness * q[0] ** 2
        return float(ke + pe)
    p = finger_param_arrays(config)
    m11, m12, m22 = _mass_entries(math.cos(q[1]), p)
    ke = 0.5 * (m11 * qd[0] ** 2 + 2 * m12 * qd[0] * qd[1] + m22 * qd[1] ** 2)
    pe = 0.5 * np.sum(p["stiffness"] * (q - p["rest"]) ** 2)
    return float(ke + pe)
