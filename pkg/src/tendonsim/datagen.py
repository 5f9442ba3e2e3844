"""Closed-loop data collection on the surrogate hardware.

Runs the servo against a plant at 80 Hz (plant substepped at 400 Hz),
logging the encoder channels and the load-cell force. The load cell
samples at 20 Hz; its channel is linearly resampled back onto the 80 Hz
log grid, so a 4:1 decimation of the stored channel recovers the actual
20 Hz readings exactly.

Command trajectories come in four families: steps, sinusoids, ramps and
stairs, with randomized parameters per episode.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from tendonsim.errors import ConfigError
from tendonsim.plant import (
    Obstacle,
    PlantConfig,
    fingertip_position,
    make_plant_state,
    step_plant,
)
from tendonsim.servo import ServoConfig, make_servo_state, servo_step

LOG_RATE_HZ = 80
SIM_RATE_HZ = 400
LOADCELL_RATE_HZ = 20
TWO_PI = 2.0 * math.pi

TRAJECTORY_FAMILIES = ("step", "sinusoid", "ramp", "stairs")

# column order of the episode CSV files
CSV_FIELDS = ("t", "theta_d", "theta", "theta_dot", "F_load",
              "q1", "q2", "tip_x", "tip_y")


@dataclass
class TrajectorySpec:
    family: str
    duration: float
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in TRAJECTORY_FAMILIES:
            raise ConfigError(
                f"trajectory family must be one of {TRAJECTORY_FAMILIES}, got {self.family!r}")
        if self.duration <= 0:
            raise ConfigError(f"trajectory duration must be positive, got {self.duration}")


def gen_trajectory(spec: TrajectorySpec, rate_hz: int = LOG_RATE_HZ) -> np.ndarray:
    """Desired spool angle sampled at ``rate_hz``, endpoint inclusive."""
    rng = np.random.default_rng(spec.seed)
    n = int(math.floor(spec.duration * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    p = spec.params

    if spec.family == "step":
        lo, hi = p.get("level_range", (0.0, TWO_PI))
        dwell_lo, dwell_hi = p.get("dwell_range", (0.5, 3.0))
        out = np.zeros(n)
        level, t_next, i = 0.0, float(rng.uniform(dwell_lo, dwell_hi)), 0
        for i in range(n):
            if t[i] >= t_next:
                level = float(rng.uniform(lo, hi))
                t_next = t[i] + float(rng.uniform(dwell_lo, dwell_hi))
            out[i] = level
        return out

    if spec.family == "sinusoid":
        amp = p.get("amplitude", math.pi / 2)
        w_lo, w_hi = p.get("freq_range", (math.pi, 4 * math.pi))
        omega = p.get("freq", float(rng.uniform(w_lo, w_hi)))
        phase = p.get("phase", 0.0)
        drift = np.zeros(n)
        if p.get("phase_jitter", 0.0) > 0:
            # slow random phase drift used by the perturbed-sinusoid probe
            drift = np.cumsum(rng.normal(0.0, p["phase_jitter"] / rate_hz, n))
        # offset equals the amplitude so the command never goes negative;
        # at t = 0 with zero phase the output sits exactly at the offset
        return amp + amp * np.sin(omega * t + phase + drift)

    if spec.family == "ramp":
        s_lo, s_hi = p.get("slope_range", (1.0, 2.0))
        pk_lo, pk_hi = p.get("peak_range", (math.pi / 2, TWO_PI))
        out = np.zeros(n)
        level, i = 0.0, 0
        target = float(rng.uniform(pk_lo, pk_hi))
        slope = float(rng.uniform(s_lo, s_hi))
        for i in range(n):
            out[i] = level
            step = slope / rate_hz
            if level < target:
                level = min(level + step, target)
            else:
                level = max(level - step, target)
            if abs(level - target) < 1e-12:
                target = float(rng.uniform(pk_lo, pk_hi)) if target <= 1e-12 \
                    else 0.0
                slope = float(rng.uniform(s_lo, s_hi))
        return out

    # stairs: fixed-height increments up to a peak, then back down; the
    # dwell is constant within an episode (drawn once when not given)
    height = p.get("height", 0.1)
    dwell = p.get("dwell")
    if dwell is None:
        lo, hi = p.get("dwell_range", (0.3, 0.8))
        dwell = float(rng.uniform(lo, hi))
    pk_lo, pk_hi = p.get("peak_range", (1.0, 2.5))
    out = np.zeros(n)
    level, direction = 0.0, 1.0
    peak = float(rng.uniform(pk_lo, pk_hi))
    t_next = dwell
    for i in range(n):
        if t[i] >= t_next:
            level = level + direction * height
            if level >= peak:
                direction = -1.0
            elif level <= 0.0:
                level, direction = 0.0, 1.0
                peak = float(rng.uniform(pk_lo, pk_hi))
            t_next = t[i] + dwell
        out[i] = level
    return out


def resample_load_cell(samples: np.ndarray, factor: int = 4,
                       length: int | None = None) -> np.ndarray:
    """Linearly interpolate low-rate load-cell samples onto the log grid.

    Output index ``factor*i`` lands exactly on ``samples[i]``, so decimating
    the result by ``factor`` recovers the input. With ``length`` given, the
    tail past the last sample holds its value.
    """
    samples = np.asarray(samples, float)
    n = len(samples)
    base = factor * (n - 1) + 1
    idx = np.arange(base) / factor
    out = np.interp(idx, np.arange(n), samples)
    if length is not None:
        if length < base:
            return out[:length]
        out = np.concatenate([out, np.full(length - base, samples[-1])])
    return out


def run_episode(plant_config: PlantConfig, servo_config: ServoConfig,
                theta_d: np.ndarray, seed: int, obstacles=(),
                loadcell_noise_std: float = 0.05,
                sim_rate_hz: int = SIM_RATE_HZ,
                rate_hz: int = LOG_RATE_HZ) -> dict:
    """Drive one command trajectory; returns 80 Hz channel arrays.

    The returned ``F_load`` channel is the noisy 20 Hz load-cell path
    resampled onto the log grid; ``force`` keeps the exact applied tension
    for diagnostics.
    """
    if sim_rate_hz % rate_hz != 0:
        raise ConfigError(f"sim rate {sim_rate_hz} must be a multiple of log rate {rate_hz}")
    substeps = sim_rate_hz // rate_hz
    dt_log = 1.0 / rate_hz
    dt_sim = 1.0 / sim_rate_hz

    seeds = np.random.SeedSequence(seed).spawn(2)
    servo = make_servo_state(servo_config, theta0=0.0, seed=seeds[0])
    cell_rng = np.random.default_rng(seeds[1])

    state = make_plant_state(plant_config)
    n = len(theta_d)
    cols = {k: np.zeros(n) for k in ("t", "theta_d", "theta", "theta_dot", "force")}
    qlog = np.zeros((n, plant_config.n_coords))

    for i in range(n):
        t = i * dt_log
        force, theta, omega = servo_step(servo, servo_config, float(theta_d[i]),
                                         state, plant_config, dt_log,
                                         t=t, obstacles=obstacles)
        qlog[i] = state.q
        cols["t"][i] = t
        cols["theta_d"][i] = theta_d[i]
        cols["theta"][i] = theta
        cols["theta_dot"][i] = omega
        cols["force"][i] = force
        for k in range(substeps):
            state = step_plant(state, plant_config, force, dt_sim,
                               t=t + k * dt_sim, obstacles=obstacles)

    factor = rate_hz // LOADCELL_RATE_HZ
    cell = cols["force"][::factor].copy()
    if loadcell_noise_std > 0:
        cell = cell + cell_rng.normal(0.0, loadcell_noise_std, len(cell))
    cols["F_load"] = resample_load_cell(cell, factor=factor, length=n)

    if plant_config.kind == "finger":
        cols["q1"], cols["q2"] = qlog[:, 0], qlog[:, 1]
        tips = fingertip_position(plant_config, qlog)
        cols["tip_x"], cols["tip_y"] = tips[:, 0], tips[:, 1]
    else:
        cols["q1"] = qlog[:, 0]
        cols["q2"] = np.zeros(n)
        cols["tip_x"] = np.zeros(n)
        cols["tip_y"] = np.zeros(n)
    return cols


# ---------------------------------------------------------------------------
# systems and datasets


def blocking_events(seed: int, duration: float, n_events: int = 3) -> list:
    """Seeded on/off obstacle schedule for contact-rich finger episodes."""
    if duration < 6.0:
        return []
    rng = np.random.default_rng(seed)
    starts = np.sort(rng.uniform(1.0, duration - 4.0, n_events))
    return [Obstacle(joint=int(rng.integers(0, 2)),
                     angle=float(rng.uniform(0.3, 0.8)),
                     t_start=float(s),
                     t_end=float(s + rng.uniform(1.0, 3.0)))
            for s in starts]


def make_system(name: str, servo_overrides: dict | None = None):
    """Named benchmark rigs: one finger and three spring benches."""
    springs = {"spring_weak": 75.0, "spring_nominal": 150.0, "spring_strong": 300.0}
    if name == "finger":
        plant = PlantConfig(kind="finger")
    elif name in springs:
        plant = PlantConfig(kind="spring_mass", stiffness=springs[name])
    else:
        raise ConfigError(f"unknown system {name!r}; expected finger or one of {sorted(springs)}")
    servo = ServoConfig(**(servo_overrides or {}))
    return plant, servo


@dataclass
class Episode:
    system_id: str
    seed: int
    family: str
    data: dict
    blocked: bool = False

    @property
    def n_records(self) -> int:
        return len(self.data["t"])


@dataclass
class Dataset:
    episodes: list
    rate_hz: int = LOG_RATE_HZ

    def __len__(self):
        return len(self.episodes)

    @property
    def n_records(self) -> int:
        return sum(ep.n_records for ep in self.episodes)

    def by_system(self, system_id: str) -> "Dataset":
        return Dataset([ep for ep in self.episodes if ep.system_id == system_id],
                       self.rate_hz)


def collect_dataset(total_minutes: float = 36.0, seed: int = 0,
                    episode_seconds: float = 60.0,
                    shares=(("finger", 0.5), ("spring_weak", 0.25), ("spring_strong", 0.25)),
                    servo_overrides: dict | None = None,
                    loadcell_noise_std: float = 0.05,
                    blocking_share: float = 0.5,
                    progress=None) -> Dataset:
    """Collect a mixed-family corpus across the benchmark systems.

    Episode count per system follows ``shares``; families cycle within
    each system. A ``blocking_share`` fraction of finger episodes runs
    with scripted obstacle on/off events so contact appears in training.
    Episodes are generated in canonical order (system name, then episode
    index) with per-episode seeds spawned from ``seed``.
    """
    total_s = total_minutes * 60.0
    n_episodes = int(round(total_s / episode_seconds))
    counts = {name: int(round(frac * n_episodes)) for name, frac in shares}

    root = np.random.SeedSequence(seed)
    episodes = []
    records_per_ep = int(math.floor(episode_seconds * LOG_RATE_HZ))
    job = 0
    for name, _ in shares:
        plant_cfg, servo_cfg = make_system(name, servo_overrides)
        blocked_every = int(round(1.0 / blocking_share)) if blocking_share > 0 else 0
        for k in range(counts[name]):
            family = TRAJECTORY_FAMILIES[k % len(TRAJECTORY_FAMILIES)]
            ep_seed = int(root.spawn(1)[0].generate_state(1)[0])
            spec = TrajectorySpec(family=family, duration=episode_seconds, seed=ep_seed)
            theta_d = gen_trajectory(spec)[:records_per_ep]
            obstacles = ()
            if name == "finger" and blocked_every and k % blocked_every == blocked_every - 1:
                obstacles = blocking_events(ep_seed, episode_seconds)
            data = run_episode(plant_cfg, servo_cfg, theta_d, seed=ep_seed,
                               obstacles=obstacles,
                               loadcell_noise_std=loadcell_noise_std)
            episodes.append(Episode(system_id=name, seed=ep_seed, family=family,
                                    data=data, blocked=bool(obstacles)))
            job += 1
            if progress is not None:
                progress(job, n_episodes)
    return Dataset(episodes)


def split_dataset(dataset: Dataset, val_fraction: float = 0.25, seed: int = 0):
    """Episode-level shuffle split, stratified by system.

    Windows never straddle the split, and every system contributes to
    both sides (validation takes at least one episode per system).
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    by_system: dict = {}
    for i, ep in enumerate(dataset.episodes):
        by_system.setdefault(ep.system_id, []).append(i)

    val_idx = set()
    for name in sorted(by_system):
        idx = by_system[name]
        order = rng.permutation(len(idx))
        n_val = max(1, int(round(val_fraction * len(idx))))
        if n_val >= len(idx):
            raise ConfigError(
                f"system {name!r} has too few episodes ({len(idx)}) to split")
        val_idx.update(idx[j] for j in order[:n_val])

    train = [ep for i, ep in enumerate(dataset.episodes) if i not in val_idx]
    val = [ep for i, ep in enumerate(dataset.episodes) if i in val_idx]
    return Dataset(train, dataset.rate_hz), Dataset(val, dataset.rate_hz)


# ---------------------------------------------------------------------------
# persistence


def episode_filename(index: int, ep: Episode) -> str:
    return f"ep{index:04d}_{ep.system_id}_{ep.family}.csv"


def write_episode_csv(path: str, data: dict):
    """CSV with repr-rounded floats: parsing the text recovers exact values."""
    n = len(data["t"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for i in range(n):
            writer.writerow([repr(float(data[k][i])) for k in CSV_FIELDS])


def read_episode_csv(path: str) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_FIELDS:
            raise ConfigError(f"unexpected episode CSV header in {path}: {header}")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows, float)
    return {k: arr[:, j].copy() for j, k in enumerate(CSV_FIELDS)}


def save_dataset(dataset: Dataset, directory: str):
    os.makedirs(directory, exist_ok=True)
    manifest = {"rate_hz": dataset.rate_hz, "episodes": []}
    for i, ep in enumerate(dataset.episodes):
        fname = episode_filename(i, ep)
        write_episode_csv(os.path.join(directory, fname), ep.data)
        manifest["episodes"].append({
            "file": fname, "system_id": ep.system_id, "seed": ep.seed,
            "family": ep.family, "n_records": ep.n_records,
            "blocked": ep.blocked,
        })
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(directory: str) -> Dataset:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    episodes = []
    for entry in manifest["episodes"]:
        data = read_episode_csv(os.path.join(directory, entry["file"]))
        episodes.append(Episode(system_id=entry["system_id"], seed=entry["seed"],
                                family=entry["family"], data=data,
                                blocked=entry.get("blocked", False)))
    return Dataset(episodes, manifest["rate_hz"])
