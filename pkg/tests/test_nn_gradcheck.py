"""Finite-difference checks for every hand-written backward pass."""

import numpy as np
import pytest

from tendonsim.estimators import layers as L
from tendonsim.estimators.gradcheck import numerical_grad_check

TOL = 1e-4


def check_module(module, x, flatten_loss=False, seed=0):
    """Gradcheck `module` under the loss 0.5 * sum((f(x) - y)^2)."""
    rng = np.random.default_rng(seed)
    out0 = module.forward(x)
    y = rng.standard_normal(out0.shape)

    def compute_loss():
        out = module.forward(x)
        return 0.5 * float(np.sum((out - y) ** 2))

    def backprop():
        module.zero_grad()
        out = module.forward(x)
        module.backward(out - y)
        return 0.5 * float(np.sum((out - y) ** 2))

    report = numerical_grad_check(module, compute_loss, backprop, step=1e-5)
    assert report["max_rel_error"] < TOL, report["tensors"]
    return report


def rng64(seed=0):
    return np.random.default_rng(seed)


def test_dense_relu_chain():
    rng = rng64(1)
    net = L.Sequential(
        L.Dense(5, 7, rng, dtype=np.float64), L.ReLU(),
        L.Dense(7, 3, rng, dtype=np.float64))
    x = rng.standard_normal((4, 5))
    check_module(net, x)


def test_layernorm():
    rng = rng64(2)
    net = L.Sequential(L.LayerNorm(6, dtype=np.float64),
                       L.Dense(6, 2, rng, dtype=np.float64))
    x = rng.standard_normal((5, 6)) * 2.0 + 1.0
    check_module(net, x)


def test_flatten_roundtrip():
    f = L.Flatten()
    x = np.arange(24, dtype=float).reshape(2, 3, 4)
    y = f.forward(x)
    assert y.shape == (2, 12)
    assert np.array_equal(f.backward(y), x)


def test_gru_layer():
    rng = rng64(3)
    net = L.GruLayer(4, 6, rng, dtype=np.float64)
    x = rng.standard_normal((3, 5, 4))
    check_module(net, x)


def test_attention_causal():
    rng = rng64(4)
    net = L.MultiHeadSelfAttention(8, 2, rng, dtype=np.float64)
    x = rng.standard_normal((2, 6, 8))
    check_module(net, x)


def test_transformer_block():
    rng = rng64(5)
    net = L.TransformerBlock(8, 2, 16, rng, dtype=np.float64)
    x = rng.standard_normal((2, 5, 8))
    check_module(net, x)


def test_attention_mask_is_exact():
    # outputs at position t are bit-identical when later inputs change
    rng = rng64(6)
    net = L.MultiHeadSelfAttention(8, 4, rng, dtype=np.float64)
    x = rng.standard_normal((1, 7, 8))
    base = net.forward(x)
    cut = 4
    x2 = x.copy()
    x2[0, cut:, :] += rng.standard_normal((7 - cut, 8)) * 3.0
    moved = net.forward(x2)
    assert np.array_equal(base[0, :cut], moved[0, :cut])
    assert not np.allclose(base[0, cut:], moved[0, cut:])


def test_gru_step_matches_sequence_forward():
    rng = rng64(7)
    net = L.GruLayer(3, 5, rng, dtype=np.float64)
    x = rng.standard_normal((2, 9, 3))
    seq = net.forward(x)
    h = net.initial_state(2, dtype=np.float64)
    for k in range(9):
        h = net.step(x[:, k, :], h)
        assert np.array_equal(h, seq[:, k, :])


def test_sinusoidal_positions_table():
    table = L.sinusoidal_positions(10, 8, dtype=np.float64)
    assert table.shape == (10, 8)
    assert np.allclose(table[0, 0::2], 0.0)
    assert np.allclose(table[0, 1::2], 1.0)
    # first pair oscillates at unit frequency
    assert table[3, 0] == pytest.approx(np.sin(3.0))
    assert table[3, 1] == pytest.approx(np.cos(3.0))
    # later pairs use geometrically longer wavelengths
    assert table[9, 6] == pytest.approx(np.sin(9.0 / 10000.0 ** (6 / 8)))


def test_set_parameters_roundtrip():
    rng = rng64(8)
    a = L.Sequential(L.Dense(4, 3, rng, dtype=np.float64), L.ReLU(),
                     L.Dense(3, 2, rng, dtype=np.float64))
    rng2 = rng64(9)
    b = L.Sequential(L.Dense(4, 3, rng2, dtype=np.float64), L.ReLU(),
                     L.Dense(3, 2, rng2, dtype=np.float64))
    b.set_parameters(dict(a.named_parameters()))
    x = rng.standard_normal((6, 4))
    assert np.array_equal(a.forward(x), b.forward(x))
    with pytest.raises(KeyError):
        b.set_parameters({"l0.w": np.zeros((4, 3))})


def test_parameter_count():
    rng = rng64(10)
    net = L.Dense(10, 4, rng)
    assert net.parameter_count() == 10 * 4 + 4
