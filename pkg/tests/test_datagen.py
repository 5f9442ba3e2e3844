import math

import numpy as np
import pytest

from tendonsim.datagen import (
    CSV_FIELDS,
    Dataset,
    TrajectorySpec,
    blocking_events,
    collect_dataset,
    gen_trajectory,
    load_dataset,
    make_system,
    resample_load_cell,
    run_episode,
    save_dataset,
    split_dataset,
)
from tendonsim.errors import ConfigError
from tendonsim.plant import Obstacle


def test_trajectory_spec_validation():
    with pytest.raises(ConfigError):
        TrajectorySpec(family="square", duration=10.0, seed=0)
    with pytest.raises(ConfigError):
        TrajectorySpec(family="step", duration=0.0, seed=0)


def test_gen_trajectory_lengths_and_determinism():
    for family in ("step", "sinusoid", "ramp", "stairs"):
        spec = TrajectorySpec(family=family, duration=5.0, seed=11)
        a = gen_trajectory(spec)
        b = gen_trajectory(spec)
        assert len(a) == 5 * 80 + 1
        assert np.array_equal(a, b)
        c = gen_trajectory(TrajectorySpec(family=family, duration=5.0, seed=12))
        assert np.all(a >= -1e-12)
        assert np.all(np.isfinite(c))


def test_step_trajectory_dwells_and_levels():
    spec = TrajectorySpec(family="step", duration=30.0, seed=3)
    traj = gen_trajectory(spec)
    changes = np.nonzero(np.diff(traj) != 0)[0]
    dwells = np.diff(changes) / 80.0
    assert dwells.min() >= 0.5 - 1e-9
    assert dwells.max() <= 3.0 + 0.05
    assert traj.max() <= 2 * math.pi
    assert traj.min() >= 0.0


def test_sinusoid_trajectory_range_and_rate():
    spec = TrajectorySpec(family="sinusoid", duration=10.0, seed=5,
                          params={"freq": 2 * math.pi})
    traj = gen_trajectory(spec)
    # zero phase starts at the offset; span is [0, 2*amplitude]
    assert traj[0] == pytest.approx(math.pi / 2)
    assert traj.max() == pytest.approx(math.pi, abs=1e-3)
    assert traj.min() >= 0.0
    # one full period per second at freq 2*pi
    assert traj[80] == pytest.approx(traj[0], abs=1e-6)
    assert traj[20] == pytest.approx(math.pi, abs=1e-6)


def test_ramp_trajectory_slope_bounds():
    spec = TrajectorySpec(family="ramp", duration=20.0, seed=7)
    traj = gen_trajectory(spec)
    slopes = np.abs(np.diff(traj)) * 80.0
    moving = slopes[slopes > 1e-9]
    assert moving.max() <= 2.0 + 1e-6
    # all but the partial corner samples move at the drawn slope
    full_rate = moving[moving >= 1.0 - 1e-6]
    assert len(full_rate) >= 0.95 * len(moving)


def test_stairs_trajectory_increment_height():
    spec = TrajectorySpec(family="stairs", duration=20.0, seed=9)
    traj = gen_trajectory(spec)
    jumps = np.diff(traj)
    steps = np.nonzero(np.abs(jumps) > 1e-12)[0]
    assert np.allclose(np.abs(jumps[steps]), 0.1)
    # dwell is constant within an episode
    gaps = np.diff(steps)
    assert gaps.min() == gaps.max()


def test_resample_load_cell_roundtrip():
    rng = np.random.default_rng(0)
    cell = rng.normal(4.0, 1.0, 25)
    dense = resample_load_cell(cell, factor=4)
    assert len(dense) == 4 * 24 + 1
    assert np.array_equal(dense[::4], cell)
    # midpoints are linear interpolants
    assert dense[2] == pytest.approx(0.5 * (cell[0] + cell[1]))
    padded = resample_load_cell(cell, factor=4, length=100)
    assert len(padded) == 100
    assert np.all(padded[97:] == cell[-1])


def test_run_episode_channels():
    plant_cfg, servo_cfg = make_system("spring_nominal")
    spec = TrajectorySpec(family="sinusoid", duration=4.0, seed=21)
    theta_d = gen_trajectory(spec)
    log = run_episode(plant_cfg, servo_cfg, theta_d, seed=21)
    n = len(theta_d)
    for key in CSV_FIELDS:
        assert len(log[key]) == n
    assert log["t"][1] - log["t"][0] == pytest.approx(1.0 / 80)
    assert np.all(log["force"] >= 0.0)
    assert np.all(log["force"] <= servo_cfg.max_force)
    # load cell grid points match the noisy 20 Hz samples after decimation
    assert np.array_equal(log["F_load"][::4][:-1], log["F_load"][: -4: 4])
    # with noise disabled the channel interpolates the true force exactly
    quiet = run_episode(plant_cfg, servo_cfg, theta_d, seed=21,
                        loadcell_noise_std=0.0)
    assert np.array_equal(quiet["F_load"][::4], quiet["force"][::4])


def test_run_episode_deterministic_in_seed():
    plant_cfg, servo_cfg = make_system("spring_weak")
    theta_d = gen_trajectory(TrajectorySpec(family="step", duration=3.0, seed=2))
    a = run_episode(plant_cfg, servo_cfg, theta_d, seed=5)
    b = run_episode(plant_cfg, servo_cfg, theta_d, seed=5)
    c = run_episode(plant_cfg, servo_cfg, theta_d, seed=6)
    for key in ("theta", "theta_dot", "F_load"):
        assert np.array_equal(a[key], b[key])
    assert not np.array_equal(a["F_load"], c["F_load"])


def test_run_episode_finger_logs_kinematics():
    plant_cfg, servo_cfg = make_system("finger")
    theta_d = gen_trajectory(TrajectorySpec(family="ramp", duration=3.0, seed=8))
    log = run_episode(plant_cfg, servo_cfg, theta_d, seed=8)
    assert np.any(log["q1"] > 0.05)
    assert np.any(log["q2"] > 0.05)
    tip_r = np.hypot(log["tip_x"], log["tip_y"])
    assert np.all(tip_r <= sum(plant_cfg.link_lengths) + 1e-9)


def test_run_episode_with_obstacle_reduces_motion():
    plant_cfg, servo_cfg = make_system("finger")
    theta_d = np.full(241, 2.0)
    block = Obstacle(joint=0, angle=0.15)
    blocked = run_episode(plant_cfg, servo_cfg, theta_d, seed=4, obstacles=(block,))
    free = run_episode(plant_cfg, servo_cfg, theta_d, seed=4)
    assert blocked["q1"].max() < free["q1"].max() - 0.1


def test_blocked_interval_stalls_motion_while_force_rises():
    plant_cfg, servo_cfg = make_system("finger")
    spec = TrajectorySpec(family="ramp", duration=6.0, seed=1,
                          params={"slope_range": (1.0, 1.0),
                                  "peak_range": (6.0, 6.0)})
    theta_d = gen_trajectory(spec)
    blocks = (Obstacle(joint=0, angle=0.25, t_start=0.5, t_end=6.0),
              Obstacle(joint=1, angle=0.25, t_start=0.5, t_end=6.0))
    log = run_episode(plant_cfg, servo_cfg, theta_d, seed=1, obstacles=blocks,
                      loadcell_noise_std=0.0)
    # right after the block engages the force climbs toward saturation
    rise = (log["t"] >= 0.7) & (log["t"] <= 1.1)
    assert log["force"][rise][-1] > log["force"][rise][0] + 2.0
    # later the command keeps rising while the spool stays stalled
    stall = (log["t"] >= 1.7) & (log["t"] <= 4.0)
    assert log["theta_d"][stall][-1] - log["theta_d"][stall][0] > 1.0
    assert np.ptp(log["theta"][stall]) < 0.2
    assert log["force"][stall].min() > 0.9 * servo_cfg.max_force


def test_blocking_events_seeded_and_bounded():
    a = blocking_events(seed=42, duration=60.0)
    b = blocking_events(seed=42, duration=60.0)
    assert len(a) == 3
    assert all(x.t_start == y.t_start and x.angle == y.angle for x, y in zip(a, b))
    for ev in a:
        assert 1.0 <= ev.t_start < ev.t_end <= 60.0
        assert ev.joint in (0, 1)
        assert 0.3 <= ev.angle <= 0.8
    assert blocking_events(seed=1, duration=4.0) == []


def test_collect_dataset_interleaves_blocking_on_finger_only():
    ds = collect_dataset(total_minutes=0.8, seed=3, episode_seconds=6.0)
    finger = [ep for ep in ds.episodes if ep.system_id == "finger"]
    springs = [ep for ep in ds.episodes if ep.system_id != "finger"]
    assert sum(ep.blocked for ep in finger) == len(finger) // 2
    assert not any(ep.blocked for ep in springs)


def test_make_system_names():
    with pytest.raises(ConfigError):
        make_system("hydraulic")
    plant, servo = make_system("spring_strong")
    assert plant.stiffness == 300.0
    assert servo.max_force == 21.0


def test_split_dataset_stratified_per_system():
    from tendonsim.datagen import Episode

    def stub(system, seed):
        return Episode(system_id=system, seed=seed, family="step",
                       data={"t": np.zeros(3)})

    eps = [stub(s, i) for s in ("finger", "spring_weak", "spring_strong")
           for i in range(10)]
    ds = Dataset(eps)
    train, val = split_dataset(ds, val_fraction=0.2, seed=7)
    for system in ("finger", "spring_weak", "spring_strong"):
        assert sum(ep.system_id == system for ep in val.episodes) == 2
        assert sum(ep.system_id == system for ep in train.episodes) == 8
    # same seed reproduces the assignment
    train2, val2 = split_dataset(ds, val_fraction=0.2, seed=7)
    assert [ep.seed for ep in val2.episodes] == [ep.seed for ep in val.episodes]

    with pytest.raises(ConfigError):
        split_dataset(Dataset([stub("finger", 0)]), val_fraction=0.4, seed=0)


def test_collect_split_save_load_roundtrip(tmp_path):
    ds = collect_dataset(total_minutes=0.8, seed=13, episode_seconds=6.0,
                         shares=(("finger", 0.5), ("spring_weak", 0.25),
                                 ("spring_strong", 0.25)))
    assert len(ds) == 8
    systems = {ep.system_id for ep in ds.episodes}
    assert systems == {"finger", "spring_weak", "spring_strong"}
    assert ds.n_records == 8 * 6 * 80

    train, val = split_dataset(ds, val_fraction=0.25, seed=1)
    assert len(train) + len(val) == len(ds)
    # stratified: each of the three systems contributes one val episode
    assert len(val) == 3
    assert {ep.system_id for ep in val.episodes} == systems
    assert {ep.system_id for ep in train.episodes} == systems

    save_dataset(ds, tmp_path / "corpus")
    back = load_dataset(tmp_path / "corpus")
    assert len(back) == len(ds)
    for a, b in zip(ds.episodes, back.episodes):
        assert a.system_id == b.system_id
        assert a.family == b.family
        for key in CSV_FIELDS:
            assert np.array_equal(a.data[key], b.data[key]), key
