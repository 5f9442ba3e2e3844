"""Experiment suite run against the surrogate ground truth.

Four experiment families: step-suite generalization across systems,
contact/blocking robustness, a perturbed sinusoid probing latency
capture, and the open-loop sim-vs-real gap, plus the closed-loop policy
transfer comparison. Every experiment is a pure function of its configs,
model files and seed, so re-running writes byte-identical traces.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from tendonsim.datagen import (
    LOG_RATE_HZ,
    TrajectorySpec,
    gen_trajectory,
    make_system,
    run_episode,
)
from tendonsim.errors import ConfigError, IntegrationError
from tendonsim.estimators.windows import DECIMATE, build_windows
from tendonsim.plant import Obstacle, PlantConfig
from tendonsim.servo import ServoConfig, ideal_force
from tendonsim.simforce import (
    CONTROL_RATE_HZ,
    IdealSource,
    LearnedSource,
    SurrogateSource,
    calibrate_ideal_gain,
    replay_open_loop,
)

EXPERIMENTS = ("generalization", "contact", "sine", "gap", "policy")
SYSTEMS = ("spring_weak", "spring_strong", "finger")

STEP_LEVELS = (0.0, 2.0, 4.0, 1.0)
STEP_HOLDS = (1.0, 2.0, 3.0)
BLOCKING_CONDITIONS = ("none", "half", "full")

MM_PER_M = 1000.0
MAX_LAG_TICKS = 20


@dataclass
class MetricReport:
    """Per-experiment metrics plus the provenance needed to re-run them.

    ``conditions`` maps a condition name to its metric dict; ``traces``
    maps it to the trajectory CSV the numbers were computed from.
    """

    experiment: str
    conditions: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# metric primitives


def rmse(pred, truth) -> float:
    err = np.asarray(pred, float) - np.asarray(truth, float)
    return float(np.sqrt(np.mean(err * err)))


def rmse_reference(pred, truth) -> float:
    """Naive two-pass RMSE used to cross-check the vectorized path."""
    diffs = [float(p) - float(t) for p, t in zip(pred, truth)]
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))


def abs_err_std(pred, truth) -> float:
    return float(np.std(np.abs(np.asarray(pred, float) - np.asarray(truth, float))))


def _verify_rmse(pred, truth, value: float):
    ref = rmse_reference(pred, truth)
    if abs(ref - value) > 1e-9 * max(1.0, abs(ref)):
        raise IntegrationError(
            f"rmse self-check failed: vectorized {value!r} vs reference {ref!r}")


def xcorr_lag(pred, truth, max_lag: int = MAX_LAG_TICKS) -> int:
    """Cross-correlation peak offset in ticks; positive = pred leads truth."""
    p = np.asarray(pred, float)
    s = np.asarray(truth, float)
    p = p - p.mean()
    s = s - s.mean()
    best_lag, best = 0, -math.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            a, b = p[: len(p) - lag], s[lag:]
        else:
            a, b = p[-lag:], s[: len(s) + lag]
        c = float(np.dot(a, b)) / len(a)
        if c > best:
            best, best_lag = c, lag
    return best_lag


# ---------------------------------------------------------------------------
# provenance


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(*configs) -> str:
    blob = json.dumps([dataclasses.asdict(c) for c in configs], sort_keys=True)
    return _sha256(blob.encode())


def model_hash(model) -> str:
    h = hashlib.sha256()
    for name, p in model.net.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p).tobytes())
    h.update(model.normalizer.to_block().tobytes())
    return h.hexdigest()


def policy_hash(policy) -> str:
    h = hashlib.sha256()
    for name, p in policy.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p).tobytes())
    h.update(policy.log_std.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# trace output


def write_trace_csv(path, cols: dict, fields):
    """Atomic CSV write with repr-rounded floats (parse recovers values)."""
    n = len(cols[fields[0]])
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for i in range(n):
            writer.writerow([repr(float(cols[k][i])) for k in fields])
    os.replace(tmp, path)


def write_summary_json(path, report: MetricReport):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _emit(report: MetricReport, out_dir, name: str, cols: dict, fields):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    fname = f"{report.experiment}_{name}.csv"
    write_trace_csv(os.path.join(out_dir, fname), cols, fields)
    report.traces[name] = fname


def _finish(report: MetricReport, out_dir):
    if out_dir is not None:
        write_summary_json(
            os.path.join(out_dir, f"{report.experiment}_summary.json"), report)
    return report


# ---------------------------------------------------------------------------
# shared protocol pieces


def step_suite_trajectory(rate_hz: int = LOG_RATE_HZ) -> np.ndarray:
    """Deterministic step battery: each hold set runs the full level cycle.

    Hold sets concatenate in order 1 s, 2 s, 3 s; within a set the target
    visits 0, 2, 4, 1 rad. Never part of the training corpus.
    """
    parts = []
    for hold in STEP_HOLDS:
        n = int(round(hold * rate_hz))
        for level in STEP_LEVELS:
            parts.append(np.full(n, level))
    return np.concatenate(parts)


def _hold_slices(rate_hz: int = CONTROL_RATE_HZ):
    out, start = {}, 0
    for hold in STEP_HOLDS:
        n = len(STEP_LEVELS) * int(round(hold * rate_hz))
        out[hold] = slice(start, start + n)
        start += n
    return out


def predict_on_log(model, log: dict):
    """20 Hz model predictions plus the exact force target for one log."""
    x, y = build_windows(log)
    return model.predict(x), y


def _ideal_prediction(log: dict, gain: float,
                      max_force: float) -> np.ndarray:
    theta_d = np.asarray(log["theta_d"], float)[::DECIMATE]
    theta = np.asarray(log["theta"], float)[::DECIMATE]
    f = ideal_force(theta_d, theta, gain, clamp=True)
    return np.minimum(f, max_force)


def _resolve_gain(ideal_gain, seed: int) -> float:
    if ideal_gain is not None:
        return float(ideal_gain)
    return calibrate_ideal_gain(seed=seed)


# ---------------------------------------------------------------------------
# experiments


def eval_generalization(models: dict, seed: int = 0, out_dir=None,
                        systems=SYSTEMS) -> MetricReport:
    """Step-suite force RMSE for every (model, system) pair.

    ``models`` maps a label (usually the architecture name) to a trained
    estimator. Adds per-hold-length metrics so drift over longer holds is
    visible, and a cross-system mean per model.
    """
    report = MetricReport("generalization")
    theta_d = step_suite_trajectory()
    holds = _hold_slices()
    checked = False

    per_model: dict = {name: [] for name in models}
    for system in systems:
        plant_cfg, servo_cfg = make_system(system)
        log = run_episode(plant_cfg, servo_cfg, theta_d, seed=seed,
                          loadcell_noise_std=0.0)
        trace = {"t": log["t"][::DECIMATE], "theta_d": log["theta_d"][::DECIMATE],
                 "theta": log["theta"][::DECIMATE],
                 "theta_dot": log["theta_dot"][::DECIMATE]}
        truth = None
        for name, model in models.items():
            pred, truth = predict_on_log(model, log)
            value = rmse(pred, truth)
            if not checked:
                _verify_rmse(pred, truth, value)
                checked = True
            cond = {"rmse": value, "abs_err_std": abs_err_std(pred, truth)}
            for hold, sl in holds.items():
                cond[f"rmse_hold_{hold:g}s"] = rmse(pred[sl], truth[sl])
            report.conditions[f"{name}/{system}"] = cond
            per_model[name].append(value)
            trace[f"pred_{name}"] = pred
        trace["truth"] = truth
        fields = ("t", "theta_d", "theta", "theta_dot", "truth",
                  *(f"pred_{name}" for name in models))
        _emit(report, out_dir, system, trace, fields)
        report.hashes[f"config/{system}"] = config_hash(plant_cfg, servo_cfg)

    for name, values in per_model.items():
        report.conditions[f"{name}/mean"] = {"rmse": float(np.mean(values))}
        report.hashes[f"model/{name}"] = model_hash(models[name])
    return _finish(report, out_dir)


def contact_ramp_trajectory(rate_hz: int = LOG_RATE_HZ) -> np.ndarray:
    """Rise to 2.4 rad at 0.8 rad/s, hold, return, settle. 10 s total."""
    t = np.arange(int(round(10.0 * rate_hz))) / rate_hz
    up = np.minimum(0.8 * t, 2.4)
    down = np.maximum(2.4 - 0.8 * np.maximum(t - 6.0, 0.0), 0.0)
    return np.where(t < 6.0, up, down)


def blocking_obstacles(condition: str) -> tuple:
    """Rigid stop on both joints: absent, at half excursion, or at the start."""
    if condition == "none":
        return ()
    angle = {"half": 0.62, "full": 0.05}[condition]
    return (Obstacle(joint=0, angle=angle), Obstacle(joint=1, angle=angle))


def eval_contact(model, seed: int = 0, out_dir=None,
                 ideal_gain=None) -> MetricReport:
    """Ramp the finger into a rigid stop; compare learned vs ideal force."""
    report = MetricReport("contact")
    plant_cfg, servo_cfg = make_system("finger")
    gain = _resolve_gain(ideal_gain, seed)
    theta_d = contact_ramp_trajectory()
    checked = False

    for condition in BLOCKING_CONDITIONS:
        obstacles = blocking_obstacles(condition)
        log = run_episode(plant_cfg, servo_cfg, theta_d, seed=seed,
                          obstacles=obstacles, loadcell_noise_std=0.0)
        pred, truth = predict_on_log(model, log)
        ideal = _ideal_prediction(log, gain, servo_cfg.max_force)
        r_learned = rmse(pred, truth)
        if not checked:
            _verify_rmse(pred, truth, r_learned)
            checked = True
        r_ideal = rmse(ideal, truth)
        report.conditions[condition] = {
            "rmse_learned": r_learned,
            "rmse_ideal": r_ideal,
            "abs_err_std_learned": abs_err_std(pred, truth),
            "abs_err_std_ideal": abs_err_std(ideal, truth),
        }
        report.ratios[f"{condition}/learned_vs_ideal"] = r_learned / r_ideal
        trace = {"t": log["t"][::DECIMATE], "theta_d": log["theta_d"][::DECIMATE],
                 "theta": log["theta"][::DECIMATE], "truth": truth,
                 "pred_learned": pred, "pred_ideal": ideal}
        _emit(report, out_dir, condition, trace,
              ("t", "theta_d", "theta", "truth", "pred_learned", "pred_ideal"))

    report.hashes["config"] = config_hash(plant_cfg, servo_cfg)
    report.hashes["model"] = model_hash(model)
    report.hashes["ideal_gain"] = repr(gain)
    return _finish(report, out_dir)


def perturbation_events(seed: int, duration: float, n_events: int = 4) -> tuple:
    """Seeded obstacle on/off script standing in for hand perturbations."""
    rng = np.random.default_rng(seed)
    starts = np.sort(rng.uniform(2.0, duration - 3.0, n_events))
    events = []
    for k, t0 in enumerate(starts):
        events.append(Obstacle(joint=int(rng.integers(0, 2)),
                               angle=float(rng.uniform(0.3, 0.8)),
                               t_start=float(t0),
                               t_end=float(t0 + rng.uniform(0.8, 2.0))))
    return tuple(events)


def eval_perturbed_sine(model, seed: int = 0, out_dir=None, ideal_gain=None,
                        duration: float = 20.0) -> MetricReport:
    """Jittered sinusoid with scripted contact events; latency statistics."""
    report = MetricReport("sine")
    plant_cfg, servo_cfg = make_system("finger")
    gain = _resolve_gain(ideal_gain, seed)
    # quarter-period phase lag starts the command at zero so the probe
    # ramps in from rest instead of stepping at t = 0
    spec = TrajectorySpec("sinusoid", duration, seed=seed,
                          params={"amplitude": 1.0, "freq": 2.0,
                                  "phase": -math.pi / 2.0,
                                  "phase_jitter": 1.0})
    theta_d = gen_trajectory(spec)
    obstacles = perturbation_events(seed, duration)
    log = run_episode(plant_cfg, servo_cfg, theta_d, seed=seed,
                      obstacles=obstacles, loadcell_noise_std=0.0)

    pred, truth = predict_on_log(model, log)
    ideal = _ideal_prediction(log, gain, servo_cfg.max_force)
    r_learned = rmse(pred, truth)
    _verify_rmse(pred, truth, r_learned)
    lag_learned = xcorr_lag(pred, truth)
    lag_ideal = xcorr_lag(ideal, truth)
    report.conditions["learned"] = {
        "rmse": r_learned, "abs_err_std": abs_err_std(pred, truth),
        "lag_ticks": lag_learned,
        "lag_seconds": lag_learned / CONTROL_RATE_HZ,
    }
    report.conditions["ideal"] = {
        "rmse": rmse(ideal, truth), "abs_err_std": abs_err_std(ideal, truth),
        "lag_ticks": lag_ideal,
        "lag_seconds": lag_ideal / CONTROL_RATE_HZ,
    }
    report.ratios["lag_learned_vs_ideal"] = (
        abs(lag_learned) / abs(lag_ideal) if lag_ideal else math.inf)
    trace = {"t": log["t"][::DECIMATE], "theta_d": log["theta_d"][::DECIMATE],
             "theta": log["theta"][::DECIMATE], "truth": truth,
             "pred_learned": pred, "pred_ideal": ideal}
    _emit(report, out_dir, "trace", trace,
          ("t", "theta_d", "theta", "truth", "pred_learned", "pred_ideal"))
    report.hashes["config"] = config_hash(plant_cfg, servo_cfg)
    report.hashes["model"] = model_hash(model)
    report.hashes["ideal_gain"] = repr(gain)
    return _finish(report, out_dir)


def gap_trajectory(duration: float = 20.0,
                   rate_hz: int = CONTROL_RATE_HZ) -> np.ndarray:
    t = np.arange(int(round(duration * rate_hz)) + 1) / rate_hz
    return 1.2 * (1.0 - np.cos(1.5 * t))


def tip_distance(trace_a: dict, trace_b: dict) -> np.ndarray:
    dx = np.asarray(trace_a["tip_x"], float) - np.asarray(trace_b["tip_x"], float)
    dy = np.asarray(trace_a["tip_y"], float) - np.asarray(trace_b["tip_y"], float)
    return np.sqrt(dx * dx + dy * dy)


def eval_sim2real_gap(model, seed: int = 0, out_dir=None,
                      ideal_gain=None) -> MetricReport:
    """Open-loop sinusoid replay: fingertip gap of each sim vs the surrogate."""
    report = MetricReport("gap")
    plant_cfg, servo_cfg = make_system("finger")
    gain = _resolve_gain(ideal_gain, seed)
    theta_d = gap_trajectory()
    sources = {
        "surrogate": SurrogateSource(servo_cfg, seed=seed),
        "learned": LearnedSource(model, max_force=servo_cfg.max_force),
        "ideal": IdealSource(gain, max_force=servo_cfg.max_force),
    }
    traces = replay_open_loop(sources, plant_cfg, theta_d)

    metrics = {}
    for name in ("learned", "ideal"):
        dist_mm = tip_distance(traces[name], traces["surrogate"]) * MM_PER_M
        value = rmse(dist_mm, np.zeros_like(dist_mm))
        metrics[name] = value
        report.conditions[name] = {
            "tip_rmse_mm": value,
            "abs_err_std_mm": float(np.std(dist_mm)),
            "tip_max_mm": float(dist_mm.max()),
        }
    _verify_rmse(tip_distance(traces["learned"], traces["surrogate"]) * MM_PER_M,
                 np.zeros(len(theta_d)), metrics["learned"])
    report.ratios["improvement"] = 1.0 - metrics["learned"] / metrics["ideal"]

    fields = ("t", "theta_d", "theta", "theta_dot", "F_load",
              "q1", "q2", "tip_x", "tip_y")
    for name, trace in traces.items():
        _emit(report, out_dir, name, trace, fields)
    report.hashes["config"] = config_hash(plant_cfg, servo_cfg)
    report.hashes["model"] = model_hash(model)
    report.hashes["ideal_gain"] = repr(gain)
    return _finish(report, out_dir)


def eval_policy_transfer(policies: dict, seed: int = 0,
                         out_dir=None) -> MetricReport:
    """Stairs deployment of each policy on the surrogate-real system.

    ``policies`` maps a label ("learned", "ideal") to a PolicyNet. Both
    run the identical schedule and surrogate seed; the report splits the
    closing (up-stairs) and opening (down-stairs) phases.
    """
    from tendonsim.rl.deploy import deploy_policy, stairs_schedule

    report = MetricReport("policy")
    plant_cfg, servo_cfg = make_system("finger")
    alpha, segment, values = stairs_schedule()
    opening = segment >= len(values) // 2
    checked = False

    metrics = {}
    for name, policy in policies.items():
        log = deploy_policy(policy, alpha, plant_cfg, servo_cfg, seed=seed)
        err_mm = np.sqrt((log["tip_x"] - log["goal_x"]) ** 2
                         + (log["tip_y"] - log["goal_y"]) ** 2) * MM_PER_M
        value = rmse(err_mm, np.zeros_like(err_mm))
        if not checked:
            _verify_rmse(err_mm, np.zeros_like(err_mm), value)
            checked = True
        metrics[name] = value
        report.conditions[name] = {
            "tip_rmse_mm": value,
            "abs_err_std_mm": float(np.std(err_mm)),
            "tip_rmse_up_mm": rmse(err_mm[~opening], np.zeros((~opening).sum())),
            "tip_rmse_down_mm": rmse(err_mm[opening], np.zeros(opening.sum())),
            "opening_max_err_mm": float(err_mm[opening].max()),
        }
        report.hashes[f"policy/{name}"] = policy_hash(policy)
        cols = dict(log)
        cols["tip_err_mm"] = err_mm
        cols["opening"] = opening.astype(float)
        _emit(report, out_dir, name, cols,
              ("t", "alpha", "theta", "theta_d", "action", "force", "tip_x",
               "tip_y", "goal_x", "goal_y", "tip_err_mm", "opening"))

    if {"learned", "ideal"} <= set(metrics):
        report.ratios["learned_vs_ideal"] = metrics["learned"] / metrics["ideal"]
    report.hashes["config"] = config_hash(plant_cfg, servo_cfg)
    return _finish(report, out_dir)


def run_experiment(name: str, **kwargs) -> MetricReport:
    runners = {
        "generalization": eval_generalization,
        "contact": eval_contact,
        "sine": eval_perturbed_sine,
        "gap": eval_sim2real_gap,
        "policy": eval_policy_transfer,
    }
    if name not in runners:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return runners[name](**kwargs)
