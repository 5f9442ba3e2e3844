"""Minibatch trainer shared by the three force estimators.

Inputs are raw windows in physical units; the trainer fits the
normalizer on the training split, optimizes mean squared error in
normalized space, and reports validation RMSE in newtons. The best
validation snapshot is restored before returning.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from tendonsim.estimators.optim import Adam, cosine_lr
from tendonsim.estimators.windows import Normalizer


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    lr_min_frac: float = 0.05
    seed: int = 0
    patience: int | None = None     # epochs without val improvement
    log: bool = False


def rmse(pred, target) -> float:
    pred = np.asarray(pred, np.float64)
    target = np.asarray(target, np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def train_estimator(model, x_train, y_train, x_val, y_val,
                    cfg: TrainConfig | None = None) -> dict:
    """Returns a history dict; the model ends at its best-val parameters."""
    cfg = cfg or TrainConfig()
    x_train = np.asarray(x_train, np.float64)
    y_train = np.asarray(y_train, np.float64)

    model.normalizer = Normalizer.fit(x_train, y_train)
    dtype = model.dtype
    xt = model.normalizer.normalize_x(x_train).astype(dtype)
    yt = model.normalizer.normalize_y(y_train).astype(dtype)

    n = len(xt)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    opt = Adam(model.net, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    history = {"train_loss": [], "val_rmse": []}
    best = {"rmse": math.inf, "epoch": -1, "params": None}
    t0 = time.monotonic()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            xb, yb = xt[idx], yt[idx]
            out = model.net.forward(xb)
            diff = out - yb
            loss_sum += float(np.sum(diff * diff))
            model.net.zero_grad()
            model.net.backward((2.0 / len(idx)) * diff)
            opt.step(lr=cosine_lr(step, total_steps, cfg.lr, cfg.lr_min_frac))
            step += 1

        val_rmse = rmse(model.predict(x_val), y_val)
        history["train_loss"].append(loss_sum / n)
        history["val_rmse"].append(val_rmse)
        if cfg.log:
            print(f"epoch {epoch + 1:3d}/{cfg.epochs}  "
                  f"train_mse {loss_sum / n:.5f}  val_rmse {val_rmse:.4f} N")

        if val_rmse < best["rmse"]:
            best = {"rmse": val_rmse, "epoch": epoch,
                    "params": {k: v.copy()
                               for k, v in model.net.named_parameters()}}
        elif cfg.patience is not None and epoch - best["epoch"] >= cfg.patience:
            break

    if best["params"] is not None:
        model.net.set_parameters(best["params"])
    history["best_epoch"] = best["epoch"]
    history["best_val_rmse"] = best["rmse"]
    history["wall_s"] = time.monotonic() - t0
    model.meta.update({"val_rmse": best["rmse"], "epochs_run": len(history["val_rmse"]),
                       "best_epoch": best["epoch"]})
    return history
