"""Trainer behavior: convergence, best-epoch restore, history shape."""

import numpy as np

from tendonsim.estimators import build_estimator
from tendonsim.estimators.training import TrainConfig, rmse, train_estimator


def toy_problem(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 6, 3))
    # smooth nonlinear function of the window tail
    y = np.tanh(x[:, -1, 0]) + 0.5 * x[:, -1, 1] * x[:, -2, 1] + 0.2 * x[:, :, 2].sum(axis=1)
    cut = int(0.85 * n)
    return (x[:cut], y[:cut]), (x[cut:], y[cut:])


def test_training_reduces_val_rmse():
    (xt, yt), (xv, yv) = toy_problem()
    model = build_estimator("mlp", hyper={"history": 6, "hidden": (32, 16)})
    baseline = rmse(np.full_like(yv, yt.mean()), yv)
    hist = train_estimator(model, xt, yt, xv, yv,
                           TrainConfig(epochs=25, batch_size=128, lr=3e-3))
    assert hist["best_val_rmse"] < 0.35 * baseline
    assert len(hist["val_rmse"]) == len(hist["train_loss"]) == 25
    # returned model carries the best snapshot, not the last epoch
    assert rmse(model.predict(xv), yv) == hist["best_val_rmse"]


def test_training_restores_best_epoch():
    (xt, yt), (xv, yv) = toy_problem(n=1200, seed=3)
    model = build_estimator("rnn", hyper={"embed": 8, "hidden": 8})
    hist = train_estimator(model, xt, yt, xv, yv,
                           TrainConfig(epochs=6, batch_size=128, lr=3e-3))
    assert hist["best_epoch"] == int(np.argmin(hist["val_rmse"]))
    assert hist["best_val_rmse"] == min(hist["val_rmse"])
    assert model.meta["val_rmse"] == hist["best_val_rmse"]


def test_patience_stops_early():
    rng = np.random.default_rng(4)
    xt = rng.standard_normal((400, 6, 3))
    xv = rng.standard_normal((200, 6, 3))
    yt = rng.standard_normal(400)       # unlearnable target
    yv = rng.standard_normal(200)
    model = build_estimator("mlp", hyper={"history": 6, "hidden": (8,)})
    hist = train_estimator(model, xt, yt, xv, yv,
                           TrainConfig(epochs=200, batch_size=256, lr=3e-3,
                                       patience=3))
    assert len(hist["val_rmse"]) < 200


def test_normalizer_fitted_on_train_split():
    (xt, yt), (xv, yv) = toy_problem(n=600, seed=5)
    xt = xt * 40.0 + 100.0        # far from unit scale
    model = build_estimator("mlp", hyper={"history": 6, "hidden": (8,)})
    train_estimator(model, xt, yt, xv, yv, TrainConfig(epochs=1))
    assert np.allclose(model.normalizer.x_mean,
                       xt.reshape(-1, 3).mean(axis=0))
    assert abs(model.normalizer.y_mean - yt.mean()) < 1e-12
