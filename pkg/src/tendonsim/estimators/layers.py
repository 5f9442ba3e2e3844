"""Neural network layers with hand-written forward and backward passes.

Everything is plain numpy. Each layer caches what its backward pass needs
during forward, accumulates parameter gradients into ``grads``, and
returns the gradient with respect to its input. Layers are built with an
explicit ``rng`` and ``dtype`` so training runs are reproducible and
gradient checks can run in float64.
"""

from __future__ import annotations

import math

import numpy as np


class Module:
    """Base class: parameter/gradient registry plus child traversal."""

    def __init__(self):
        self.params: dict = {}
        self.grads: dict = {}
        self._children: dict = {}

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = ""):
        for name, value in self.params.items():
            yield prefix + name, value
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_grads(self, prefix: str = ""):
        for name, value in self.grads.items():
            yield prefix + name, value
        for cname, child in self._children.items():
            yield from child.named_grads(prefix + cname + ".")

    def zero_grad(self):
        for key in self.grads:
            self.grads[key][...] = 0.0
        for child in self._children.values():
            child.zero_grad()

    def set_parameters(self, flat: dict, prefix: str = ""):
        """Load parameters from a {qualified_name: array} mapping."""
        for name in self.params:
            key = prefix + name
            if key not in flat:
                raise KeyError(f"missing parameter {key}")
            src = np.asarray(flat[key])
            if src.shape != self.params[name].shape:
                raise ValueError(
                    f"shape mismatch for {key}: {src.shape} vs {self.params[name].shape}")
            self.params[name] = src.astype(self.params[name].dtype, copy=True)
            self.grads[name] = np.zeros_like(self.params[name])
        for cname, child in self._children.items():
            child.set_parameters(flat, prefix + cname + ".")

    def parameter_count(self) -> int:
        return sum(int(np.prod(v.shape)) for _, v in self.named_parameters())

    def _register(self, name: str, value: np.ndarray):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Dense(Module):
    """Affine map on the last axis: y = x @ w + b."""

    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32):
        super().__init__()
        scale = math.sqrt(2.0 / n_in)
        self._register("w", (rng.standard_normal((n_in, n_out)) * scale).astype(dtype))
        self._register("b", np.zeros(n_out, dtype=dtype))
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        x = self._x
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.grads["w"] += x2.T @ dy2
        self.grads["b"] += dy2.sum(axis=0)
        return dy @ self.params["w"].T


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Flatten(Module):
    """Collapse all axes after the first into one."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(f"l{i}", layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class LayerNorm(Module):
    """Normalization over the last axis with learned gain and bias."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self._register("g", np.ones(dim, dtype=dtype))
        self._register("b", np.zeros(dim, dtype=dtype))
        self._cache = None

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.params["g"] + self.params["b"]

    def backward(self, dy):
        xhat, inv = self._cache
        g = self.params["g"]
        axes = tuple(range(dy.ndim - 1))
        self.grads["g"] += (dy * xhat).sum(axis=axes)
        self.grads["b"] += dy.sum(axis=axes)
        dxhat = dy * g
        n = xhat.shape[-1]
        # derivative of (x - mu) / sqrt(var + eps) with both mu and var
        # depending on x
        return inv * (dxhat
                      - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def softmax_lastaxis(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class GruLayer(Module):
    """Gated recurrent unit over (batch, time, features) sequences.

    Gate convention: z (update), r (reset), candidate n with the reset gate
    applied to the hidden contribution. New state h' = (1 - z) * n + z * h.
    ``step`` exposes the same cell for single-tick streaming; the sequence
    forward is a loop over ``step``'s math, so the two agree exactly.
    """

    def __init__(self, n_in: int, n_hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_hidden = n_in, n_hidden
        s_in = math.sqrt(1.0 / n_in)
        s_h = math.sqrt(1.0 / n_hidden)
        for gate in ("z", "r", "n"):
            self._register(f"wx_{gate}",
                           (rng.standard_normal((n_in, n_hidden)) * s_in).astype(dtype))
            self._register(f"wh_{gate}",
                           (rng.standard_normal((n_hidden, n_hidden)) * s_h).astype(dtype))
            self._register(f"b_{gate}", np.zeros(n_hidden, dtype=dtype))
        self._cache = None

    def initial_state(self, batch: int, dtype=None):
        return np.zeros((batch, self.n_hidden), dtype=dtype or self.params["b_z"].dtype)

    def _cell(self, x, h):
        p = self.params
        z = _sigmoid(x @ p["wx_z"] + h @ p["wh_z"] + p["b_z"])
        r = _sigmoid(x @ p["wx_r"] + h @ p["wh_r"] + p["b_r"])
        hwn = h @ p["wh_n"]
        n = np.tanh(x @ p["wx_n"] + r * hwn + p["b_n"])
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, z, r, n, hwn)

    def step(self, x, h):
        """One streaming tick; returns the new hidden state."""
        h_new, _ = self._cell(x, h)
        return h_new

    def forward(self, x, h0=None):
        b, t, _ = x.shape
        h = self.initial_state(b, dtype=x.dtype) if h0 is None else h0
        caches, outs = [], []
        for k in range(t):
            h, cache = self._cell(x[:, k, :], h)
            caches.append(cache)
            outs.append(h)
        self._cache = caches
        return np.stack(outs, axis=1)

    def backward(self, dy):
        caches = self._cache
        p = self.params
        g = self.grads
        b, t, _ = dy.shape
        dx_seq = np.zeros((b, t, self.n_in), dtype=dy.dtype)
        dh_next = np.zeros((b, self.n_hidden), dtype=dy.dtype)
        for k in range(t - 1, -1, -1):
            x, h, z, r, n, hwn = caches[k]
            dh = dy[:, k, :] + dh_next
            dz = dh * (h - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z

            da_n = dn * (1.0 - n * n)
            g["wx_n"] += x.T @ da_n
            g["b_n"] += da_n.sum(axis=0)
            dr = da_n * hwn
            dhwn = da_n * r
            g["wh_n"] += h.T @ dhwn
            dh_prev = dh_prev + dhwn @ p["wh_n"].T
            dx = da_n @ p["wx_n"].T

            da_z = dz * z * (1.0 - z)
            g["wx_z"] += x.T @ da_z
            g["wh_z"] += h.T @ da_z
            g["b_z"] += da_z.sum(axis=0)
            dx += da_z @ p["wx_z"].T
            dh_prev = dh_prev + da_z @ p["wh_z"].T

            da_r = dr * r * (1.0 - r)
            g["wx_r"] += x.T @ da_r
            g["wh_r"] += h.T @ da_r
            g["b_r"] += da_r.sum(axis=0)
            dx += da_r @ p["wx_r"].T
            dh_prev = dh_prev + da_r @ p["wh_r"].T

            dx_seq[:, k, :] = dx
            dh_next = dh_prev
        return dx_seq


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MultiHeadSelfAttention(Module):
    """Causal multi-head self-attention over (batch, time, d_model).

    The causal mask sets future scores to -inf before the softmax, so
    masked positions carry exactly zero weight and output t depends only
    on inputs up to t.
    """

    def __init__(self, d_model: int, n_heads: int, rng, dtype=np.float32,
                 causal: bool = True):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {n_heads}")
        self.d_model, self.n_heads = d_model, n_heads
        self.d_head = d_model // n_heads
        self.causal = causal
        s = math.sqrt(1.0 / d_model)
        for name in ("wq", "wk", "wv", "wo"):
            self._register(name,
                           (rng.standard_normal((d_model, d_model)) * s).astype(dtype))
        self._register("bo", np.zeros(d_model, dtype=dtype))
        self._cache = None

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)

    def forward(self, x):
        p = self.params
        q = self._split(x @ p["wq"])
        k = self._split(x @ p["wk"])
        v = self._split(x @ p["wv"])
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(self.d_head)
        if self.causal:
            t = x.shape[1]
            mask = np.triu(np.ones((t, t), dtype=bool), k=1)
            scores = np.where(mask, -np.inf, scores)
        attn = softmax_lastaxis(scores)
        ctx = attn @ v
        merged = self._merge(ctx)
        out = merged @ p["wo"] + p["bo"]
        self._cache = (x, q, k, v, attn, merged)
        return out

    def backward(self, dy):
        p = self.params
        x, q, k, v, attn, merged = self._cache
        dy2 = dy.reshape(-1, self.d_model)
        self.grads["wo"] += merged.reshape(-1, self.d_model).T @ dy2
        self.grads["bo"] += dy2.sum(axis=0)
        dmerged = dy @ p["wo"].T
        dctx = self._split(dmerged.reshape(x.shape))

        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        # softmax backward: rows are independent distributions
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores = dscores / math.sqrt(self.d_head)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        dxq = self._merge(dq)
        dxk = self._merge(dk)
        dxv = self._merge(dv)
        x2 = x.reshape(-1, self.d_model)
        self.grads["wq"] += x2.T @ dxq.reshape(-1, self.d_model)
        self.grads["wk"] += x2.T @ dxk.reshape(-1, self.d_model)
        self.grads["wv"] += x2.T @ dxv.reshape(-1, self.d_model)
        return dxq @ p["wq"].T + dxk @ p["wk"].T + dxv @ p["wv"].T


class TransformerBlock(Module):
    """Post-norm encoder block: attention and feed-forward sublayers, each
    wrapped as LayerNorm(x + sublayer(x))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng,
                 dtype=np.float32):
        super().__init__()
        self.attn = self.add_child("attn",
                                   MultiHeadSelfAttention(d_model, n_heads, rng, dtype))
        self.ln1 = self.add_child("ln1", LayerNorm(d_model, dtype))
        self.ff = self.add_child("ff", Sequential(
            Dense(d_model, d_ff, rng, dtype), ReLU(),
            Dense(d_ff, d_model, rng, dtype)))
        self.ln2 = self.add_child("ln2", LayerNorm(d_model, dtype))

    def forward(self, x):
        h = self.ln1.forward(x + self.attn.forward(x))
        return self.ln2.forward(h + self.ff.forward(h))

    def backward(self, dy):
        dh = self.ln2.backward(dy)
        dh = dh + self.ff.backward(dh)
        dx = self.ln1.backward(dh)
        return dx + self.attn.backward(dx)


def sinusoidal_positions(n: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table of shape (n, dim).

    Frequency pair i uses wavelength 10000^(2i/dim); even columns take the
    sine, odd columns the cosine.
    """
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((n, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)
