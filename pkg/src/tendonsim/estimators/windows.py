"""Encoder-history windows: the estimator input representation.

Episode logs run at 80 Hz; estimators consume 20 Hz rows of
(theta_d, theta, theta_dot). Each training example is the window of the
last 30 rows ending at the prediction instant (about 1.45 s of context),
left-padded with the earliest row when the episode is younger than the
window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HISTORY_LEN = 30
DECIMATE = 4            # 80 Hz log -> 20 Hz estimator rate
WINDOW_CHANNELS = ("theta_d", "theta", "theta_dot")


def build_windows(data: dict, history: int = HISTORY_LEN,
                  decimate: int = DECIMATE):
    """Windows and force targets for one episode log.

    Returns ``(X, y)`` with X shaped (n, history, 3) and y (n,), where n is
    the number of 20 Hz rows. Window i ends at row i; the force target is
    the load-cell reading at that same instant.
    """
    rows = np.stack([np.asarray(data[c], float)[::decimate]
                     for c in WINDOW_CHANNELS], axis=-1)
    y = np.asarray(data["F_load"], float)[::decimate]
    n = len(y)
    pad = np.repeat(rows[:1], history - 1, axis=0)
    padded = np.concatenate([pad, rows], axis=0)
    idx = np.arange(n)[:, None] + np.arange(history)[None, :]
    return padded[idx], y


def dataset_windows(dataset, history: int = HISTORY_LEN,
                    decimate: int = DECIMATE):
    """Stack windows across a dataset; returns (X, y, episode_index)."""
    xs, ys, eps = [], [], []
    for i, ep in enumerate(dataset.episodes):
        x, y = build_windows(ep.data, history, decimate)
        xs.append(x)
        ys.append(y)
        eps.append(np.full(len(y), i, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(eps)


@dataclass
class Normalizer:
    """Per-channel standardization for windows and the force target."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Normalizer":
        flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
        x_mean = flat.mean(axis=0)
        x_std = np.maximum(flat.std(axis=0), 1e-6)
        y64 = np.asarray(y, np.float64)
        return cls(x_mean=x_mean, x_std=x_std,
                   y_mean=float(y64.mean()),
                   y_std=float(max(y64.std(), 1e-6)))

    @classmethod
    def identity(cls, n_channels: int = 3) -> "Normalizer":
        return cls(np.zeros(n_channels), np.ones(n_channels), 0.0, 1.0)

    def normalize_x(self, x):
        return (x - self.x_mean) / self.x_std

    def normalize_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denormalize_y(self, yn):
        return yn * self.y_std + self.y_mean

    def to_block(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.x_mean, np.float64),
            np.asarray(self.x_std, np.float64),
            [np.float64(self.y_mean)], [np.float64(self.y_std)],
        ])

    @classmethod
    def from_block(cls, block: np.ndarray) -> "Normalizer":
        block = np.asarray(block, np.float64)
        n = (len(block) - 2) // 2
        return cls(x_mean=block[:n].copy(), x_std=block[n:2 * n].copy(),
                   y_mean=float(block[-2]), y_std=float(block[-1]))
