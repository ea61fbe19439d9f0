import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binloc.nn import (
    Adam,
    AdamState,
    LayerSpec,
    Sequential,
    ShapeError,
    adam_step,
    grad_check,
    make_layer,
)
from binloc.nn import functional as F

SEEDS = range(5)


# -- loop oracles ------------------------------------------------------------

def conv1d_loops(x, w, b):
    B, C, L = x.shape
    O, _, K = w.shape
    y = np.zeros((B, O, L - K + 1))
    for n in range(B):
        for o in range(O):
            for t in range(L - K + 1):
                y[n, o, t] = np.sum(w[o] * x[n, :, t:t + K]) + b[o]
    return y


def conv2d_loops(x, w, b):
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    y = np.zeros((B, O, H - KH + 1, W - KW + 1))
    for n in range(B):
        for o in range(O):
            for i in range(H - KH + 1):
                for j in range(W - KW + 1):
                    y[n, o, i, j] = np.sum(w[o] * x[n, :, i:i + KH, j:j + KW]) + b[o]
    return y


def maxpool2d_loops(x, ph, pw):
    B, C, H, W = x.shape
    y = np.zeros((B, C, H // ph, W // pw))
    for i in range(H // ph):
        for j in range(W // pw):
            y[:, :, i, j] = x[:, :, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw].max(axis=(2, 3))
    return y


def distinct_values(rng, shape, gap=1e-3):
    """Random arrangement of well-separated values, so pooling has no near ties."""
    n = int(np.prod(shape))
    return rng.permutation(np.arange(n) * gap - n * gap / 2).reshape(shape)


# -- forward against oracles -----------------------------------------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((2, 3, 40)), rng.standard_normal((4, 3, 7)), rng.standard_normal(4)
    y, _ = F.conv1d_forward(x, w, b)
    np.testing.assert_allclose(y, conv1d_loops(x, w, b), atol=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((2, 2, 9, 8)), rng.standard_normal((3, 2, 4, 3)), rng.standard_normal(3)
    y, _ = F.conv2d_forward(x, w, b)
    np.testing.assert_allclose(y, conv2d_loops(x, w, b), atol=1e-10)


def test_maxpool2d_matches_loops(rng):
    x = rng.standard_normal((2, 3, 10, 11))
    y, _ = F.maxpool2d_forward(x, (3, 3))
    np.testing.assert_array_equal(y, maxpool2d_loops(x, 3, 3))


def test_conv1d_shape_example():
    spec = LayerSpec("conv1d", (63,), 75)
    assert spec.output_shape((2, 8192)) == (75, 8130)
    x = np.zeros((1, 2, 8192), dtype=np.float32)
    layer = make_layer(spec, (2, 8192), np.random.default_rng(0))
    assert layer.forward(x).shape == (1, 75, 8130)


def test_maxpool1d_floor():
    assert LayerSpec("maxpool1d", (10,)).output_shape((96, 8015)) == (96, 801)
    y, _ = F.maxpool1d_forward(np.arange(8015, dtype=float).reshape(1, 1, -1), 10)
    assert y.shape == (1, 1, 801)
    assert y[0, 0, -1] == 8009


def test_elementwise_definitions():
    np.testing.assert_array_equal(F.relu_forward(np.array([-1.0, 0.0, 2.0]))[0], [0, 0, 2])
    assert F.tanh_forward(np.array([0.0]))[0][0] == 0.0
    s, _ = F.softmax_forward(np.array([[1.0, 2.0, 3.0]]))
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(s[0], e / e.sum(), rtol=1e-15)


def test_dense_identity():
    x = np.random.default_rng(0).standard_normal((5, 8))
    y, _ = F.dense_forward(x, np.eye(8), np.zeros(8))
    np.testing.assert_array_equal(y, x)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(1, 3, 20\)"):
        F.conv1d_forward(np.zeros((1, 3, 20)), np.zeros((4, 2, 5)), np.zeros(4))
    with pytest.raises(ShapeError):
        LayerSpec("conv2d", (4, 4), 8).output_shape((1, 3, 3))
    with pytest.raises(ValueError, match="dense expects input"):
        F.dense_forward(np.zeros((2, 5)), np.zeros((4, 3)), np.zeros(3))


def test_nan_output_raises():
    net = Sequential.from_specs([LayerSpec("dense", channels=2)], (3,), np.random.default_rng(0),
                                dtype=np.float64)
    with pytest.raises(FloatingPointError):
        net.forward(np.array([[np.nan, 0.0, 0.0]]))


def test_pool_gradient_goes_to_first_max():
    x = np.array([[[1.0, 3.0, 3.0, 0.0]]])
    y, cache = F.maxpool1d_forward(x, 4)
    dx = F.maxpool1d_backward(cache, np.ones_like(y))
    np.testing.assert_array_equal(dx, [[[0, 1, 0, 0]]])


# -- gradient checks ---------------------------------------------------------------

def _single(spec, in_shape, seed, init="xavier"):
    return make_layer(spec, in_shape, np.random.default_rng(seed), init, np.float64)


GRAD_CASES = {
    "conv1d": (LayerSpec("conv1d", (5,), 3), (2, 20)),
    "conv2d": (LayerSpec("conv2d", (4, 4), 3), (2, 9, 9)),
    "dense": (LayerSpec("dense", channels=4), (8,)),
    "tanh": (LayerSpec("tanh"), (6,)),
    "softmax": (LayerSpec("softmax"), (7,)),
    "flatten": (LayerSpec("flatten"), (2, 3, 4)),
}


@pytest.mark.parametrize("kind", list(GRAD_CASES))
@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_layers(kind, seed):
    spec, shape = GRAD_CASES[kind]
    layer = _single(spec, shape, seed)
    x = np.random.default_rng(100 + seed).standard_normal((3,) + shape)
    assert grad_check(layer, x, probes=20, seed=seed) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_relu(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 10))
    x = np.where(np.abs(x) < 0.05, 0.5, x)  # keep probes away from the kink
    assert grad_check(_single(LayerSpec("relu"), (10,), seed), x, seed=seed) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_maxpool1d(seed):
    x = distinct_values(np.random.default_rng(seed), (2, 3, 12))
    assert grad_check(_single(LayerSpec("maxpool1d", (3,)), (3, 12), seed), x, seed=seed) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_maxpool2d(seed):
    x = distinct_values(np.random.default_rng(seed), (2, 2, 9, 9))
    assert grad_check(_single(LayerSpec("maxpool2d", (3, 3)), (2, 9, 9), seed), x, seed=seed) < 1e-4


def test_grad_check_concat():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 5))
    y, sizes = F.concat_forward([a, b])
    proj = rng.standard_normal(y.shape)
    da, db = F.concat_backward(sizes, proj)
    # the objective sum(y * proj) is linear, so the gradient is proj split at the seam
    np.testing.assert_array_equal(da, proj[:, :3])
    np.testing.assert_array_equal(db, proj[:, 3:])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_composite(seed):
    specs = [LayerSpec("conv1d", (5,), 4), LayerSpec("tanh"), LayerSpec("maxpool1d", (2,)),
             LayerSpec("flatten"), LayerSpec("dense", channels=3)]
    rng = np.random.default_rng(seed)
    net = Sequential.from_specs(specs, (2, 24), rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 24))
    assert grad_check(net, x, probes=15, seed=seed) < 1e-4


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], state, 1e-3)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_by_hand():
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    p = np.array([0.0])
    state = AdamState.for_params([p])
    adam_step([p], [np.array([0.1])], state, 1e-3)
    assert p[0] == pytest.approx(-1e-3 * 0.1 / (0.1 + 1e-8), rel=1e-12)


def test_adam_recurrence_by_hand():
    g_seq = [0.3, -0.1, 0.2]
    p = np.array([1.0])
    state = AdamState.for_params([p])
    m = v = 0.0
    expect = 1.0
    for t, g in enumerate(g_seq, start=1):
        adam_step([p], [np.array([g])], state, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expect -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p[0] == pytest.approx(expect, rel=1e-12)


def test_adam_rejects_non_finite():
    p = np.zeros(2)
    with pytest.raises(FloatingPointError):
        adam_step([p], [np.array([np.inf, 0.0])], AdamState.for_params([p]), 1e-3)


def test_adam_optimizer_reduces_quadratic():
    net = Sequential.from_specs([LayerSpec("dense", channels=1)], (4,), np.random.default_rng(0),
                                dtype=np.float64)
    opt = Adam(net.parameters(), lr=0.05)
    x = np.random.default_rng(1).standard_normal((16, 4))
    target = x @ np.array([[1.0], [-2.0], [0.5], [3.0]])
    losses = []
    for _ in range(300):
        opt.zero_grad()
        err = net.forward(x) - target
        losses.append(float(np.mean(err ** 2)))
        net.backward(2 * err / len(x))
        opt.step()
    assert losses[-1] < 1e-3 * losses[0]


# -- determinism and properties ------------------------------------------------------

def test_seeded_build_is_bitwise_deterministic():
    specs = [LayerSpec("conv1d", (9,), 5), LayerSpec("relu"), LayerSpec("flatten"),
             LayerSpec("dense", channels=3)]
    x = np.random.default_rng(7).standard_normal((4, 2, 64)).astype(np.float32)
    outs = []
    for _ in range(2):
        net = Sequential.from_specs(specs, (2, 64), np.random.default_rng(11))
        y = net.forward(x)
        dx = net.backward(np.ones_like(y))
        outs.append((y, dx, [p.grad.copy() for p in net.parameters()]))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])
    for a, b in zip(outs[0][2], outs[1][2]):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(1, 16),
       st.integers(0, 40), st.integers(0, 2**31 - 1))
def test_conv1d_property(batch, c_in, c_out, k, extra, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, c_in, k + extra))
    w, b = rng.standard_normal((c_out, c_in, k)), rng.standard_normal(c_out)
    y, _ = F.conv1d_forward(x, w, b)
    assert y.shape == (batch, c_out, extra + 1)
    np.testing.assert_allclose(y, conv1d_loops(x, w, b), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(n, seed):
    x = np.random.default_rng(seed).normal(scale=20, size=(3, n))
    y, _ = F.softmax_forward(x)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(y >= 0)
