"""Force-source coupling: hold semantics, clamps, replay equivalence."""

import numpy as np
import pytest

import tendonsim.simforce as sf
from tendonsim.datagen import make_system, run_episode
from tendonsim.errors import IntegrationError
from tendonsim.estimators.windows import HISTORY_LEN
from tendonsim.plant import make_plant_state, motor_angle
from tendonsim.servo import ServoConfig
from tendonsim.simforce import (IdealSource, LearnedSource, SurrogateSource,
                                calibrate_ideal_gain, control_step,
                                replay_open_loop)


class ProbeSource:
    """Scripted source for exercising the coupling layer."""

    kind = "probe"
    max_force = 21.0

    def __init__(self, fn):
        self.fn = fn
        self.seen = []
        self.last_force = 0.0

    def reset(self, state, config):
        pass

    def force(self, theta_d, theta, theta_dot):
        self.seen.append((theta_d, theta, theta_dot))
        return self.fn(theta_d, theta, theta_dot)


def spring_cfg():
    return make_system("spring_nominal")[0]


def test_rate_arithmetic():
    assert sf.SIM_RATE_HZ // sf.CONTROL_RATE_HZ == 20


def test_ideal_zero_error_relaxes_to_rest():
    config = spring_cfg()
    state = make_plant_state(config, q0=[0.1])
    src = IdealSource(gain=30.0)
    for i in range(40):   # 2 s; track theta so the error stays zero
        theta_d = motor_angle(config, state)
        state = control_step(src, state, config, theta_d, t=i / 20.0)
        assert src.last_force == 0.0
    assert abs(state.q[0]) < 0.01


def test_force_held_constant_within_tick(monkeypatch):
    applied = []
    real_step = sf.step_plant

    def spy(state, config, tension, dt, t=0.0, obstacles=()):
        applied.append(tension)
        return real_step(state, config, tension, dt, t=t, obstacles=obstacles)

    monkeypatch.setattr(sf, "step_plant", spy)
    config = spring_cfg()
    state = make_plant_state(config)
    src = ProbeSource(lambda td, th, thd: 3.7)
    control_step(src, state, config, theta_d=1.0)
    assert len(applied) == 20
    assert all(f == 3.7 for f in applied)


def test_observation_matches_tendon_state():
    config = make_system("finger")[0]
    state = make_plant_state(config)
    src = ProbeSource(lambda td, th, thd: 2.0)
    state = control_step(src, state, config, theta_d=1.5)
    control_step(src, state, config, theta_d=1.5, t=0.05)
    (td0, th0, _), (td1, th1, thd1) = src.seen
    assert td0 == 1.5 and th0 == 0.0
    assert th1 == motor_angle(config, state)
    assert np.isfinite(thd1)


def test_clamp_range(monkeypatch):
    applied = []
    real_step = sf.step_plant

    def spy(state, config, tension, dt, t=0.0, obstacles=()):
        applied.append(tension)
        return real_step(state, config, tension, dt, t=t, obstacles=obstacles)

    monkeypatch.setattr(sf, "step_plant", spy)
    config = spring_cfg()
    state = make_plant_state(config)
    control_step(ProbeSource(lambda *a: -5.0), state, config, 0.0)
    control_step(ProbeSource(lambda *a: 1e9), state, config, 0.0)
    assert set(applied[:20]) == {0.0}
    assert set(applied[20:]) == {21.0}


def test_nonfinite_force_raises_with_kind():
    config = spring_cfg()
    state = make_plant_state(config)
    with pytest.raises(IntegrationError, match="probe"):
        control_step(ProbeSource(lambda *a: float("nan")), state, config, 1.0)


def test_learned_cold_start_fills_window():
    shapes = []

    class FakeModel:
        def predict(self, window):
            shapes.append(np.array(window))
            return np.float64(1.0)

    config = spring_cfg()
    state = make_plant_state(config)
    src = LearnedSource(FakeModel())
    src.reset(state, config)
    control_step(src, state, config, theta_d=0.8)
    w = shapes[0]
    assert w.shape == (HISTORY_LEN, 3)
    assert np.array_equal(w, np.tile(w[0], (HISTORY_LEN, 1)))
    assert w[0, 0] == 0.8


def test_learned_mimic_matches_ideal_rollout():
    gain = 25.0

    class MimicModel:
        def predict(self, window):
            td, th, _ = window[-1]
            return max(gain * (td - th), 0.0)

    config = spring_cfg()
    theta_d = 1.2 * (1.0 - np.cos(np.linspace(0, 4 * np.pi, 80)))
    traces = replay_open_loop(
        {"ideal": IdealSource(gain), "learned": LearnedSource(MimicModel())},
        config, theta_d)
    for key in ("theta", "q1", "F_load"):
        assert np.array_equal(traces["ideal"][key], traces["learned"][key])


def test_replay_same_source_twice_identical():
    config = make_system("finger")[0]
    theta_d = np.linspace(0, 2.0, 60)
    traces = replay_open_loop(
        {"a": IdealSource(30.0), "b": IdealSource(30.0)}, config, theta_d)
    for key in traces["a"]:
        assert np.array_equal(traces["a"][key], traces["b"][key])


def test_replay_empty_commands():
    config = spring_cfg()
    traces = replay_open_loop({"a": IdealSource(30.0)}, config, np.zeros(0))
    assert traces["a"]["t"].shape == (0,)


def test_surrogate_replay_matches_native_episode():
    # noise-free servo so the comparison is deterministic
    plant_cfg, servo_cfg = make_system("spring_nominal",
                                       {"velocity_noise_std": 0.0})
    theta_d20 = np.minimum(np.arange(60) * 0.05, 1.5)
    theta_d80 = np.repeat(theta_d20, 4)
    log = run_episode(plant_cfg, servo_cfg, theta_d80, seed=0,
                      loadcell_noise_std=0.0)

    traces = replay_open_loop({"real": SurrogateSource(servo_cfg)},
                              plant_cfg, theta_d20)
    got = traces["real"]
    assert np.allclose(got["q1"], log["q1"][::4], atol=1e-12)
    assert np.allclose(got["F_load"], log["force"][::4], atol=1e-12)


def test_calibrated_gain_reasonable_and_reproducible():
    p1 = calibrate_ideal_gain("spring_nominal", seed=1, n_episodes=2,
                              duration_s=6.0)
    p2 = calibrate_ideal_gain("spring_nominal", seed=1, n_episodes=2,
                              duration_s=6.0)
    assert p1 == p2
    assert 5.0 < p1 < 60.0
