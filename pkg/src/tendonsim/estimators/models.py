"""The three force-estimator architectures and their container format.

All three map a (batch, history, 3) window of (theta_d, theta, theta_dot)
rows to one tendon-force value per window. They are sized to live within
a factor of two of each other in parameter count so quality comparisons
are not confounded by capacity.
"""

from __future__ import annotations

import numpy as np

from tendonsim.checkpoint import read_checkpoint, write_checkpoint
from tendonsim.errors import CheckpointError
from tendonsim.estimators import layers as L
from tendonsim.estimators.windows import HISTORY_LEN, WINDOW_CHANNELS, Normalizer

ARCHITECTURES = ("mlp", "rnn", "transformer")

DEFAULT_HYPER = {
    "mlp": {"hidden": (256, 128, 64)},
    "rnn": {"embed": 128, "hidden": 64},
    "transformer": {"d_model": 16, "n_heads": 4, "n_blocks": 2,
                    "d_ff": 512, "head": (128, 64)},
}

N_CHANNELS = len(WINDOW_CHANNELS)


class MlpNet(L.Module):
    """Window flattened to one vector, then a ReLU stack."""

    def __init__(self, history: int, hidden, rng, dtype=np.float32):
        super().__init__()
        dims = [history * N_CHANNELS, *hidden]
        stack = [L.Flatten()]
        for a, b in zip(dims[:-1], dims[1:]):
            stack += [L.Dense(a, b, rng, dtype), L.ReLU()]
        stack.append(L.Dense(dims[-1], 1, rng, dtype))
        self.stack = self.add_child("stack", L.Sequential(*stack))

    def forward(self, x):
        return self.stack.forward(x)[:, 0]

    def backward(self, d):
        return self.stack.backward(d[:, None])


class RnnNet(L.Module):
    """Row embedding into a GRU; the final hidden state is read out."""

    def __init__(self, embed: int, hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.embed = self.add_child("embed", L.Dense(N_CHANNELS, embed, rng, dtype))
        self.gru = self.add_child("gru", L.GruLayer(embed, hidden, rng, dtype))
        self.head = self.add_child("head", L.Dense(hidden, 1, rng, dtype))

    def forward(self, x):
        hs = self.gru.forward(self.embed.forward(x))
        self._t = hs.shape[1]
        return self.head.forward(hs[:, -1, :])[:, 0]

    def backward(self, d):
        dh_last = self.head.backward(d[:, None])
        dseq = np.zeros((dh_last.shape[0], self._t, dh_last.shape[1]),
                        dtype=dh_last.dtype)
        dseq[:, -1, :] = dh_last
        return self.embed.backward(self.gru.backward(dseq))

    # streaming interface: one row at a time with a carried hidden state
    def stream_init(self, batch: int = 1):
        return self.gru.initial_state(batch)

    def stream_step(self, row, h):
        h_new = self.gru.step(self.embed.forward(row), h)
        pred = self.head.forward(h_new)[:, 0]
        return h_new, pred


class TransformerNet(L.Module):
    """Causal encoder over the window; the last position is read out."""

    def __init__(self, d_model: int, n_heads: int, n_blocks: int, d_ff: int,
                 head, rng, dtype=np.float32):
        super().__init__()
        self.d_model = d_model
        self.dtype = dtype
        self.embed = self.add_child("embed", L.Dense(N_CHANNELS, d_model, rng, dtype))
        self.blocks = [self.add_child(f"block{i}",
                                      L.TransformerBlock(d_model, n_heads, d_ff, rng, dtype))
                       for i in range(n_blocks)]
        dims = [d_model, *head]
        stack = []
        for a, b in zip(dims[:-1], dims[1:]):
            stack += [L.Dense(a, b, rng, dtype), L.ReLU()]
        stack.append(L.Dense(dims[-1], 1, rng, dtype))
        self.head = self.add_child("head", L.Sequential(*stack))
        self._pe_cache = {}

    def _positions(self, t: int, dtype):
        key = (t, np.dtype(dtype).str)
        if key not in self._pe_cache:
            self._pe_cache[key] = L.sinusoidal_positions(t, self.d_model, dtype)
        return self._pe_cache[key]

    def forward_sequence(self, x):
        """Per-position encoder outputs, shape (batch, time, d_model)."""
        h = self.embed.forward(x)
        h = h + self._positions(h.shape[1], h.dtype)
        for block in self.blocks:
            h = block.forward(h)
        return h

    def forward(self, x):
        h = self.forward_sequence(x)
        self._t = h.shape[1]
        return self.head.forward(h[:, -1, :])[:, 0]

    def backward(self, d):
        dh_last = self.head.backward(d[:, None])
        dseq = np.zeros((dh_last.shape[0], self._t, dh_last.shape[1]),
                        dtype=dh_last.dtype)
        dseq[:, -1, :] = dh_last
        for block in reversed(self.blocks):
            dseq = block.backward(dseq)
        return self.embed.backward(dseq)


def _build_net(arch: str, hyper: dict, rng, dtype):
    if arch == "mlp":
        return MlpNet(hyper.get("history", HISTORY_LEN),
                      tuple(hyper["hidden"]), rng, dtype)
    if arch == "rnn":
        return RnnNet(hyper["embed"], hyper["hidden"], rng, dtype)
    if arch == "transformer":
        return TransformerNet(hyper["d_model"], hyper["n_heads"],
                              hyper["n_blocks"], hyper["d_ff"],
                              tuple(hyper["head"]), rng, dtype)
    raise CheckpointError(f"unknown architecture {arch!r}")


class EstimatorModel:
    """An architecture plus its normalization buffers and metadata."""

    def __init__(self, arch: str, net, hyper: dict,
                 normalizer: Normalizer | None = None, meta: dict | None = None):
        self.arch = arch
        self.net = net
        self.hyper = hyper
        self.normalizer = normalizer or Normalizer.identity(N_CHANNELS)
        self.meta = meta or {}

    @property
    def dtype(self):
        return next(iter(self.net.named_parameters()))[1].dtype

    def parameter_count(self) -> int:
        return self.net.parameter_count()

    def predict(self, windows, chunk: int = 8192) -> np.ndarray:
        """Force predictions in newtons for raw (n, history, 3) windows."""
        windows = np.asarray(windows, float)
        squeeze = windows.ndim == 2
        if squeeze:
            windows = windows[None]
        xn = self.normalizer.normalize_x(windows).astype(self.dtype)
        outs = [self.net.forward(xn[i: i + chunk])
                for i in range(0, len(xn), chunk)]
        yn = np.concatenate(outs).astype(np.float64)
        y = self.normalizer.denormalize_y(yn)
        return y[0] if squeeze else y

    def forward_normalized(self, xn):
        return self.net.forward(xn)

    def backward(self, d):
        return self.net.backward(d)


def build_estimator(arch: str, seed: int = 0, dtype=np.float32,
                    hyper: dict | None = None) -> EstimatorModel:
    if arch not in ARCHITECTURES:
        raise CheckpointError(
            f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    merged = dict(DEFAULT_HYPER[arch])
    merged.update(hyper or {})
    rng = np.random.default_rng(
        np.random.SeedSequence([ARCHITECTURES.index(arch), seed]))
    net = _build_net(arch, merged, rng, dtype)
    return EstimatorModel(arch, net, merged)


def save_model(model: EstimatorModel, path):
    tensors = {name: np.asarray(p, np.float32)
               for name, p in model.net.named_parameters()}
    meta = {"hyper": _jsonable(model.hyper), "history_len": HISTORY_LEN,
            "channels": list(WINDOW_CHANNELS), **_jsonable(model.meta)}
    write_checkpoint(path, model.arch, tensors,
                     model.normalizer.to_block(), meta)


def load_model(path) -> EstimatorModel:
    arch, tensors, block, meta = read_checkpoint(path)
    if arch not in ARCHITECTURES:
        raise CheckpointError(f"{path} holds a {arch} checkpoint, not an estimator")
    hyper = meta.get("hyper", {})
    model = build_estimator(arch, hyper=hyper)
    model.net.set_parameters(tensors)
    model.normalizer = Normalizer.from_block(block)
    model.meta = {k: v for k, v in meta.items()
                  if k not in ("hyper", "history_len", "channels")}
    return model


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
