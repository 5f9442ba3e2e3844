"""Command-line entry point for the full pipeline.

Subcommands cover dataset collection, estimator training and evaluation,
open-loop force-source rollouts, policy training and deployment, the
experiment suite, and an end-to-end smoke run. Thread-count environment
variables are applied before any numeric library loads, so the heavy
imports happen lazily inside the handlers.

Exit codes: 0 success, 2 usage, 3 config/schema violation, 4 missing
file, 5 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import time

from tendonsim import __version__
from tendonsim.errors import CheckpointError, ConfigError, IntegrationError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_RUNTIME = 5

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                   "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                   "VECLIB_MAXIMUM_THREADS")

SMOKE_MINUTES = 2.0
SMOKE_EPISODE_SECONDS = 15.0
SMOKE_EPOCHS = 3
SMOKE_UPDATES = 20


def _apply_thread_env(args):
    """Must run before numpy is imported anywhere in this process."""
    n = None
    if getattr(args, "deterministic", False):
        n = 1
    if getattr(args, "threads", None):
        n = args.threads
    if n is not None:
        for var in THREAD_ENV_VARS:
            os.environ[var] = str(n)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get("TENDONSIM_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"TENDONSIM_SEED must be an integer, got {raw!r}")


def write_manifest(path, command: str, config, seed: int, inputs, outputs,
                   wall_s: float, extra: dict | None = None):
    doc = {
        "command": command,
        "config_hash": config.fingerprint(),
        "seed": seed,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "version": __version__,
        "wall_clock_s": round(wall_s, 3),
    }
    doc.update(extra or {})
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _swap_dir(tmp_dir: str, out_dir: str):
    """Move a fully built directory into place; replaces any previous one."""
    if os.path.isdir(out_dir):
        shutil.rmtree(out_dir)
    os.replace(tmp_dir, out_dir)


def _require(path, what: str):
    if path is None:
        raise ConfigError(f"{what} is required for this command")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# handlers


def cmd_datagen(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.datagen import collect_dataset, save_dataset

    cfg = load_config(args.config)
    t0 = time.time()
    progress = None
    if not args.quiet:
        progress = lambda i, n: print(f"episode {i}/{n}", file=sys.stderr)
    dataset = collect_dataset(total_minutes=args.minutes, seed=seed,
                              episode_seconds=args.episode_seconds,
                              servo_overrides=dataclasses.asdict(cfg.servo),
                              progress=progress)
    tmp = f"{args.out}.tmp-{os.getpid()}"
    save_dataset(dataset, tmp)
    write_manifest(os.path.join(tmp, "run_manifest.json"), "datagen", cfg,
                   seed, [], [args.out], time.time() - t0,
                   {"episodes": len(dataset), "minutes": args.minutes})
    _swap_dir(tmp, args.out)
    print(f"wrote {len(dataset)} episodes ({args.minutes:g} min) to {args.out}")
    return EXIT_OK


def cmd_train_estimator(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.datagen import load_dataset, split_dataset
    from tendonsim.estimators.models import build_estimator, save_model
    from tendonsim.estimators.training import train_estimator
    from tendonsim.estimators.windows import dataset_windows

    cfg = load_config(args.config)
    _require(args.data, "--data dataset directory")
    t0 = time.time()
    dataset = load_dataset(args.data)
    train_ds, val_ds = split_dataset(dataset, seed=seed)
    x_train, y_train, _ = dataset_windows(train_ds)
    x_val, y_val, _ = dataset_windows(val_ds)

    model = build_estimator(args.arch, seed=seed)
    tcfg = dataclasses.replace(cfg.train, seed=seed,
                               log=cfg.train.log or not args.quiet)
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    history = train_estimator(model, x_train, y_train, x_val, y_val, tcfg)
    save_model(model, args.out)
    write_manifest(f"{args.out}.manifest.json", "train-estimator", cfg, seed,
                   [args.data], [args.out], time.time() - t0,
                   {"arch": args.arch,
                    "best_val_rmse": history["best_val_rmse"],
                    "best_epoch": history["best_epoch"]})
    print(f"{args.arch}: best val rmse {history['best_val_rmse']:.4f} N "
          f"(epoch {history['best_epoch']}) -> {args.out}")
    return EXIT_OK


def cmd_eval_estimator(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.datagen import load_dataset
    from tendonsim.estimators.models import load_model
    from tendonsim.estimators.windows import build_windows
    from tendonsim.evalsuite import model_hash, rmse

    cfg = load_config(args.config)
    _require(args.model, "--model checkpoint")
    _require(args.data, "--data dataset directory")
    t0 = time.time()
    model = load_model(args.model)
    dataset = load_dataset(args.data)

    per_system: dict = {}
    for ep in dataset.episodes:
        x, y = build_windows(ep.data)
        pred = model.predict(x)
        per_system.setdefault(ep.system_id, [[], []])
        per_system[ep.system_id][0].append(pred)
        per_system[ep.system_id][1].append(y)

    import numpy as np
    summary = {"model": args.model, "arch": model.arch,
               "model_hash": model_hash(model), "systems": {}}
    all_pred, all_true = [], []
    for system, (preds, trues) in sorted(per_system.items()):
        p, t = np.concatenate(preds), np.concatenate(trues)
        summary["systems"][system] = {"rmse": rmse(p, t), "n": int(len(t))}
        all_pred.append(p)
        all_true.append(t)
    summary["rmse"] = rmse(np.concatenate(all_pred), np.concatenate(all_true))

    print(json.dumps(summary, sort_keys=True))
    if args.out:
        tmp = f"{args.out}.tmp"
        with open(tmp, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, args.out)
        write_manifest(f"{args.out}.manifest.json", "eval-estimator", cfg,
                       seed, [args.model, args.data], [args.out],
                       time.time() - t0)
    return EXIT_OK


def _resolve_sources(args, seed: int, servo_cfg):
    from tendonsim.estimators.models import load_model
    from tendonsim.simforce import (IdealSource, LearnedSource,
                                    SurrogateSource, calibrate_ideal_gain)

    names = [s.strip() for s in args.sources.split(",") if s.strip()]
    gain = args.ideal_gain
    sources = {}
    for name in names:
        if name == "surrogate":
            sources[name] = SurrogateSource(servo_cfg, seed=seed)
        elif name == "ideal":
            if gain is None:
                gain = calibrate_ideal_gain(seed=seed)
            sources[name] = IdealSource(gain, max_force=servo_cfg.max_force)
        elif name == "learned":
            model = load_model(_require(args.model, "--model checkpoint"))
            sources[name] = LearnedSource(model, max_force=servo_cfg.max_force)
        else:
            raise ConfigError(
                f"unknown source {name!r}; expected surrogate, ideal or learned")
    if not sources:
        raise ConfigError("--sources must name at least one force source")
    return sources, gain


def cmd_rollout(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.datagen import TrajectorySpec, gen_trajectory
    from tendonsim.evalsuite import write_trace_csv
    from tendonsim.simforce import CONTROL_RATE_HZ, replay_open_loop

    cfg = load_config(args.config)
    t0 = time.time()
    sources, gain = _resolve_sources(args, seed, cfg.servo)
    spec = TrajectorySpec(args.family, args.duration, seed=seed)
    theta_d = gen_trajectory(spec, rate_hz=CONTROL_RATE_HZ)
    traces = replay_open_loop(sources, cfg.plant, theta_d)

    os.makedirs(args.out, exist_ok=True)
    fields = ("t", "theta_d", "theta", "theta_dot", "F_load",
              "q1", "q2", "tip_x", "tip_y")
    outputs = []
    for name, trace in traces.items():
        path = os.path.join(args.out, f"rollout_{name}.csv")
        write_trace_csv(path, trace, fields)
        outputs.append(path)
    write_manifest(os.path.join(args.out, "run_manifest.json"), "rollout",
                   cfg, seed, [args.model] if args.model else [], outputs,
                   time.time() - t0,
                   {"family": args.family, "duration": args.duration,
                    "ideal_gain": gain})
    print(f"wrote {len(outputs)} rollout traces to {args.out}")
    return EXIT_OK


def _finger_plant(cfg):
    from tendonsim.plant import PlantConfig

    return cfg.plant if cfg.plant.kind == "finger" else PlantConfig(kind="finger")


def cmd_train_policy(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.estimators.models import load_model
    from tendonsim.rl.policy import save_policy
    from tendonsim.rl.ppo import train_policy
    from tendonsim.simforce import calibrate_ideal_gain

    cfg = load_config(args.config)
    t0 = time.time()
    model = None
    if args.source == "learned":
        model = load_model(_require(args.model, "--model checkpoint"))
    gain = args.ideal_gain
    if gain is None:
        gain = calibrate_ideal_gain(seed=seed)
    pcfg = cfg.ppo
    if args.updates is not None:
        pcfg = dataclasses.replace(pcfg, total_updates=args.updates)
    policy, history = train_policy(args.source, pcfg, seed=seed, model=model,
                                   ideal_gain=gain,
                                   plant_config=_finger_plant(cfg),
                                   env_cfg=cfg.env, log=not args.quiet)
    save_policy(policy, args.out,
                meta={"source": args.source, "seed": seed,
                      "ideal_gain": gain,
                      "best_eval_return": history["best_eval_return"]})
    write_manifest(f"{args.out}.manifest.json", "train-policy", cfg, seed,
                   [args.model] if args.model else [], [args.out],
                   time.time() - t0,
                   {"source": args.source, "updates": pcfg.total_updates,
                    "best_eval_return": history["best_eval_return"],
                    "best_update": history["best_update"]})
    print(f"{args.source} policy: best eval return "
          f"{history['best_eval_return']:.2f} -> {args.out}")
    return EXIT_OK


def cmd_eval_policy(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.evalsuite import eval_policy_transfer
    from tendonsim.rl.policy import load_policy

    cfg = load_config(args.config)
    t0 = time.time()
    policy, meta = load_policy(_require(args.policy, "--policy checkpoint"))
    label = meta.get("source", "policy")
    report = eval_policy_transfer({label: policy}, seed=seed,
                                  out_dir=args.out)
    metrics = report.conditions[label]
    write_manifest(os.path.join(args.out, "run_manifest.json"), "eval-policy",
                   cfg, seed, [args.policy], sorted(report.traces.values()),
                   time.time() - t0)
    print(f"{label}: tip rmse {metrics['tip_rmse_mm']:.2f} mm, opening max "
          f"{metrics['opening_max_err_mm']:.2f} mm -> {args.out}")
    return EXIT_OK


def cmd_eval(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.estimators.models import load_model
    from tendonsim import evalsuite as ev

    cfg = load_config(args.config)
    t0 = time.time()
    experiment = args.experiment
    kwargs = {"seed": seed, "out_dir": args.out}
    inputs = []

    if experiment == "generalization":
        models = {}
        for arch in ("mlp", "rnn", "transformer"):
            path = getattr(args, arch)
            models[arch] = load_model(_require(path, f"--{arch} checkpoint"))
            inputs.append(path)
        kwargs["models"] = models
    elif experiment in ("contact", "sine", "gap"):
        path = _require(args.model, "--model checkpoint")
        kwargs["model"] = load_model(path)
        kwargs["ideal_gain"] = args.ideal_gain
        inputs.append(path)
    else:
        from tendonsim.rl.policy import load_policy

        policies = {}
        for label, path in (("learned", args.learned_policy),
                            ("ideal", args.ideal_policy)):
            policies[label], _ = load_policy(
                _require(path, f"--{label}-policy checkpoint"))
            inputs.append(path)
        kwargs["policies"] = policies

    report = ev.run_experiment(experiment, **kwargs)
    write_manifest(os.path.join(args.out, "run_manifest.json"), "eval", cfg,
                   seed, inputs, sorted(report.traces.values()),
                   time.time() - t0, {"experiment": experiment})
    print(json.dumps({"experiment": experiment, "ratios": report.ratios},
                     sort_keys=True))
    print(f"summary: {os.path.join(args.out, experiment + '_summary.json')}")
    return EXIT_OK


def cmd_smoke(args, seed: int) -> int:
    from tendonsim.config import load_config
    from tendonsim.datagen import collect_dataset, load_dataset, save_dataset, \
        split_dataset
    from tendonsim.estimators.models import build_estimator, load_model, save_model
    from tendonsim.estimators.training import train_estimator
    from tendonsim.estimators.windows import dataset_windows
    from tendonsim.evalsuite import eval_sim2real_gap
    from tendonsim.rl.policy import save_policy
    from tendonsim.rl.ppo import PpoConfig, train_policy
    from tendonsim.simforce import calibrate_ideal_gain

    cfg = load_config(args.config)
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    say = (lambda msg: None) if args.quiet else \
        (lambda msg: print(msg, file=sys.stderr))

    say("smoke 1/5: dataset")
    data_dir = os.path.join(args.out, "dataset")
    dataset = collect_dataset(total_minutes=SMOKE_MINUTES, seed=seed,
                              episode_seconds=SMOKE_EPISODE_SECONDS,
                              servo_overrides=dataclasses.asdict(cfg.servo))
    tmp = f"{data_dir}.tmp-{os.getpid()}"
    save_dataset(dataset, tmp)
    _swap_dir(tmp, data_dir)

    say("smoke 2/5: estimator")
    train_ds, val_ds = split_dataset(load_dataset(data_dir), seed=seed)
    x_train, y_train, _ = dataset_windows(train_ds)
    x_val, y_val, _ = dataset_windows(val_ds)
    model = build_estimator("transformer", seed=seed)
    tcfg = dataclasses.replace(cfg.train, epochs=SMOKE_EPOCHS, seed=seed)
    history = train_estimator(model, x_train, y_train, x_val, y_val, tcfg)
    model_path = os.path.join(args.out, "estimator.ckpt")
    save_model(model, model_path)

    say("smoke 3/5: gap experiment")
    gain = calibrate_ideal_gain(seed=seed)
    eval_sim2real_gap(load_model(model_path), seed=seed, out_dir=args.out,
                      ideal_gain=gain)

    say("smoke 4/5: policy")
    pcfg = PpoConfig(num_envs=8, horizon=64, total_updates=SMOKE_UPDATES,
                     eval_every=10, eval_envs=2)
    policy, phistory = train_policy("ideal", pcfg, seed=seed, ideal_gain=gain,
                                    plant_config=_finger_plant(cfg),
                                    env_cfg=cfg.env)
    policy_path = os.path.join(args.out, "policy.ckpt")
    save_policy(policy, policy_path, meta={"source": "ideal", "seed": seed})

    say("smoke 5/5: manifest")
    wall = time.time() - t0
    write_manifest(os.path.join(args.out, "run_manifest.json"), "smoke", cfg,
                   seed, [], [data_dir, model_path, policy_path],
                   wall,
                   {"episodes": len(dataset),
                    "estimator_val_rmse": history["best_val_rmse"],
                    "policy_eval_return": phistory["best_eval_return"],
                    "ideal_gain": gain})
    print(f"smoke passed in {wall:.1f} s -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults built in)")
    common.add_argument("--seed", type=int,
                        help="run seed (default: $TENDONSIM_SEED or 0)")
    common.add_argument("--threads", type=int,
                        help="cap numeric library threads")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for bit-stable reruns")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="tendonsim",
        description="Surrogate-servo data collection, tendon-force estimators, "
                    "force-driven simulation and RL fingertip tracking.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", parents=[common],
                       help="collect a surrogate-servo training corpus")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--minutes", type=float, default=36.0)
    p.add_argument("--episode-seconds", type=float, default=60.0)
    p.set_defaults(handler=cmd_datagen)

    p = sub.add_parser("train-estimator", parents=[common],
                       help="train one force estimator on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--arch", required=True,
                   choices=("mlp", "rnn", "transformer"))
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.set_defaults(handler=cmd_train_estimator)

    p = sub.add_parser("eval-estimator", parents=[common],
                       help="force RMSE of a checkpoint on a dataset")
    p.add_argument("--model", required=True, help="estimator checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="write the summary JSON here")
    p.set_defaults(handler=cmd_eval_estimator)

    p = sub.add_parser("rollout", parents=[common],
                       help="open-loop force-source replay on one trajectory")
    p.add_argument("--out", required=True, help="trace output directory")
    p.add_argument("--sources", default="surrogate,ideal",
                   help="comma list of surrogate, ideal, learned")
    p.add_argument("--model", help="estimator checkpoint for the learned source")
    p.add_argument("--ideal-gain", type=float,
                   help="proportional gain (default: calibrated)")
    p.add_argument("--family", default="sinusoid",
                   choices=("step", "sinusoid", "ramp", "stairs"))
    p.add_argument("--duration", type=float, default=20.0)
    p.set_defaults(handler=cmd_rollout)

    p = sub.add_parser("train-policy", parents=[common],
                       help="PPO fingertip tracking against a force source")
    p.add_argument("--source", required=True, choices=("learned", "ideal"))
    p.add_argument("--model", help="estimator checkpoint for the learned source")
    p.add_argument("--out", required=True, help="policy checkpoint path")
    p.add_argument("--updates", type=int, help="override ppo.total_updates")
    p.add_argument("--ideal-gain", type=float,
                   help="proportional gain (default: calibrated)")
    p.set_defaults(handler=cmd_train_policy)

    p = sub.add_parser("eval-policy", parents=[common],
                       help="stairs-schedule deployment of one policy")
    p.add_argument("--policy", required=True, help="policy checkpoint")
    p.add_argument("--out", required=True, help="trace output directory")
    p.set_defaults(handler=cmd_eval_policy)

    p = sub.add_parser("eval", parents=[common],
                       help="run one experiment from the suite")
    p.add_argument("--experiment", required=True,
                   choices=("generalization", "contact", "sine", "gap",
                            "policy"))
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--model", help="estimator for contact/sine/gap")
    p.add_argument("--mlp", help="mlp checkpoint for generalization")
    p.add_argument("--rnn", help="rnn checkpoint for generalization")
    p.add_argument("--transformer",
                   help="transformer checkpoint for generalization")
    p.add_argument("--learned-policy", help="policy trained on the learned sim")
    p.add_argument("--ideal-policy", help="policy trained on the ideal sim")
    p.add_argument("--ideal-gain", type=float,
                   help="proportional gain (default: calibrated)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("smoke", parents=[common],
                       help="minutes-long end-to-end pipeline check")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_smoke)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    _apply_thread_env(args)
    try:
        seed = _resolve_seed(args)
        return args.handler(args, seed)
    except ConfigError as exc:
        print(f"error: config: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: missing-file: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_MISSING
    except (IntegrationError, CheckpointError) as exc:
        print(f"error: runtime: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
