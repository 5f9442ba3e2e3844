"""Gaussian policy with a frozen exploration width, plus a value head.

The action distribution is N(mean(s), std^2) with std fixed for the whole
run: log_std is stored as a plain buffer outside the parameter registry,
so no optimizer update can ever touch it. Snapshots serialize it next to
the weights and it must round-trip bit-exactly.
"""

from __future__ import annotations

import math

import numpy as np

from tendonsim.checkpoint import read_checkpoint, write_checkpoint
from tendonsim.errors import CheckpointError
from tendonsim.estimators import layers as L
from tendonsim.rl.env import HISTORY_K, OBS_DIM, OBS_SCALE, STATE_DIM

POLICY_HIDDEN = (128, 64, 32)
LOG_2PI = math.log(2.0 * math.pi)


def _mlp(dims, rng, dtype, head_scale: float = 1.0):
    stack = []
    for a, b in zip(dims[:-1], dims[1:]):
        stack += [L.Dense(a, b, rng, dtype), L.ReLU()]
    stack.pop()             # no activation after the output layer
    if head_scale != 1.0:
        stack[-1].params["w"] *= dtype(head_scale)
    return L.Sequential(*stack)


class PolicyNet(L.Module):
    def __init__(self, rng, hidden=POLICY_HIDDEN, fixed_std: float = 0.05,
                 state_dim: int = STATE_DIM, dtype=np.float32):
        super().__init__()
        dims = [state_dim, *hidden, 1]
        # small output head keeps the initial mean inside the action clamp;
        # a saturated mean executes the same clipped action everywhere and
        # the return signal goes flat
        self.mean_net = self.add_child("mean", _mlp(dims, rng, dtype,
                                                    head_scale=0.01))
        self.value_net = self.add_child("value", _mlp(dims, rng, dtype))
        # frozen buffer, deliberately not registered as a parameter
        self.log_std = np.array([math.log(fixed_std)], dtype=np.float32)
        self.hidden = tuple(hidden)
        self.state_dim = state_dim

    @property
    def std(self) -> float:
        return float(np.exp(self.log_std[0]))

    def forward_mean(self, s):
        return self.mean_net.forward(s)[:, 0]

    def backward_mean(self, d):
        return self.mean_net.backward(d[:, None])

    def forward_value(self, s):
        return self.value_net.forward(s)[:, 0]

    def backward_value(self, d):
        return self.value_net.backward(d[:, None])

    def act(self, s, rng) -> tuple:
        """Sample actions; returns (action, mean, log_prob)."""
        mean = self.forward_mean(s).astype(np.float64)
        noise = rng.standard_normal(mean.shape)
        action = mean + self.std * noise
        return action, mean, self.log_prob(mean, action)

    def log_prob(self, mean, action):
        z = (np.asarray(action, np.float64) - mean) / self.std
        return -0.5 * z * z - self.log_std[0] - 0.5 * LOG_2PI


def save_policy(policy: PolicyNet, path, meta: dict | None = None):
    tensors = {name: np.asarray(p, np.float32)
               for name, p in policy.named_parameters()}
    tensors["log_std"] = policy.log_std
    full_meta = {"hidden": list(policy.hidden), "state_dim": policy.state_dim,
                 "obs_dim": OBS_DIM, "history_k": HISTORY_K,
                 "obs_scale": [float(v) for v in OBS_SCALE]}
    full_meta.update(meta or {})
    write_checkpoint(path, "policy", tensors, np.zeros(8), full_meta)


def load_policy(path):
    arch, tensors, _, meta = read_checkpoint(path)
    if arch != "policy":
        raise CheckpointError(f"{path} holds a {arch} checkpoint, not a policy")
    log_std = tensors.pop("log_std")
    policy = PolicyNet(np.random.default_rng(0),
                       hidden=tuple(meta["hidden"]),
                       state_dim=int(meta["state_dim"]))
    policy.set_parameters(tensors)
    policy.log_std = np.asarray(log_std, np.float32).reshape(1)
    return policy, meta
