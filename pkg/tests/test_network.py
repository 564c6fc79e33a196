import math

import numpy as np
import pytest

from oracles import fd_hvp, fd_layer_grad, rel_err, scalar_forward
from triaccel.errors import ConfigError
from triaccel.network import LayerSpec, Network, hvp
from triaccel.precision import PrecisionMode

FP16, BF16, FP32 = PrecisionMode.FP16, PrecisionMode.BF16, PrecisionMode.FP32


def small_net(seed, act="tanh", dims=(4, 6, 5, 3)):
    return Network.mlp(dims, act, seed)


def small_batch(seed, n=10, d=4, k=3):
    rng = np.random.default_rng(seed + 1000)
    return rng.standard_normal((n, d)), rng.integers(0, k, n)


def identity_net():
    return Network([LayerSpec(2, 2, "identity")], [np.eye(2)], [np.zeros(2)])


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        LayerSpec(0, 3)
    with pytest.raises(ConfigError):
        LayerSpec(2, 3, "gelu")
    assert LayerSpec(3, 4).n_params == 16


def test_dims_must_chain():
    specs = [LayerSpec(2, 3), LayerSpec(4, 2)]
    with pytest.raises(ConfigError):
        Network(specs, [np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])


def test_identity_network_forward():
    x = np.array([[0.3, -2.0]])
    assert np.array_equal(identity_net().forward(x, [FP32]).logits, x)


def test_fp16_overflow_propagates():
    logits = identity_net().forward(np.array([[70000.0, 1.0]]), [FP16]).logits
    assert logits[0, 0] == math.inf
    # the off-diagonal path multiplies inf by a zero weight
    assert math.isnan(logits[0, 1])


def test_forward_dimension_mismatch():
    with pytest.raises(ConfigError):
        identity_net().forward(np.zeros((1, 3)))
    with pytest.raises(ConfigError):
        identity_net().forward(np.zeros((1, 2)), [FP32, FP32])


def test_forward_matches_scalar_loops():
    net = Network.mlp((5, 7, 3), "tanh", seed=3)
    X, _ = small_batch(3, n=6, d=5)
    out = net.forward(X, [FP32, FP32]).logits
    assert np.max(np.abs(out - scalar_forward(net, X))) < 1e-12


def test_fp32_path_has_no_quantization_effect():
    net = small_net(0, "relu")
    X, y = small_batch(0)
    plain = net.backward(X, y, None)
    tagged = net.backward(X, y, [FP32] * 3)
    assert plain.loss == tagged.loss
    for (a, b), (c, d) in zip(plain.grads, tagged.grads):
        assert np.array_equal(a, c) and np.array_equal(b, d)


def test_symmetric_batch_gives_zero_bias_grad():
    net = Network([LayerSpec(2, 2, "identity")], [np.zeros((2, 2))], [np.zeros(2)])
    res = net.backward(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]))
    assert np.array_equal(res.grads[0][1], np.zeros(2))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("act", ["tanh", "identity"])
def test_gradient_matches_finite_differences(seed, act):
    net = small_net(seed, act)
    X, y = small_batch(seed)
    res = net.backward(X, y)
    for layer in range(net.n_layers):
        assert rel_err(res.flat(layer), fd_layer_grad(net, layer, X, y)) < 1e-5


def test_relu_gradient_matches_finite_differences():
    net = small_net(4, "relu")
    X, y = small_batch(4)
    res = net.backward(X, y)
    for layer in range(net.n_layers):
        assert rel_err(res.flat(layer), fd_layer_grad(net, layer, X, y, h=1e-6)) < 1e-5


@pytest.mark.parametrize("mode", [FP16, BF16])
def test_low_precision_grads_close_to_fp32(mode):
    net = small_net(5)
    X, y = small_batch(5)
    ref = net.backward(X, y)
    low = net.backward(X, y, [mode] * 3)
    assert not low.nonfinite
    # a few roundings per chain, relative unit roundoff 2**-11 / 2**-8
    tol = 30 * (2.0**-11 if mode is FP16 else 2.0**-8)
    for layer in range(3):
        assert rel_err(low.flat(layer), ref.flat(layer)) < tol


def test_loss_scale_rescues_tiny_fp16_gradients():
    # weight gradients around 5e-9 sit below the FP16 subnormal range unless scaled
    specs = [LayerSpec(2, 2, "identity"), LayerSpec(2, 2, "identity")]
    net = Network(specs, [np.eye(2), np.eye(2) * 1e-4], [np.zeros(2), np.zeros(2)])
    X = np.array([[1e-4, 0.0]])
    y = np.array([0])
    ref = net.backward(X, y).grads[0][0]
    unscaled = net.backward(X, y, [FP16, FP16], loss_scale=1.0).grads[0][0]
    scaled = net.backward(X, y, [FP16, FP16], loss_scale=2.0**10).grads[0][0]
    assert np.count_nonzero(unscaled) < np.count_nonzero(scaled)
    assert rel_err(scaled, ref) < rel_err(unscaled, ref)


def test_overflow_is_flagged_not_raised():
    res = identity_net().backward(np.array([[70000.0, 1.0]]), np.array([1]), [FP16])
    assert res.nonfinite


def test_quadratic_surrogate_hvp():
    A = np.diag([3.0, 1.0])

    class Quadratic:
        dim = 2

        def __call__(self, v):
            return A @ v

    assert hvp(Quadratic(), [1.0, 0.0]).tolist() == [3.0, 0.0]


def test_hvp_rejects_bad_direction():
    net = small_net(0)
    X, y = small_batch(0)
    op = net.hvp_operator(1, X, y)
    with pytest.raises(ConfigError):
        hvp(op, [])
    with pytest.raises(ConfigError):
        op(np.ones(3))


@pytest.mark.parametrize("seed", range(3))
def test_hvp_linear_and_symmetric(seed):
    net = small_net(seed)
    X, y = small_batch(seed)
    rng = np.random.default_rng(seed)
    for layer in range(net.n_layers):
        op = net.hvp_operator(layer, X, y)
        u, v, w = rng.standard_normal((3, op.dim))
        a, b = 0.7, -1.3
        lhs = op(a * v + b * w)
        rhs = a * op(v) + b * op(w)
        assert rel_err(lhs, rhs) < 1e-10
        uHv, vHu = u @ op(v), v @ op(u)
        assert abs(uHv - vHu) <= 1e-8 * max(abs(uHv), abs(vHu), 1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_hvp_matches_gradient_differences(seed):
    net = small_net(seed)
    X, y = small_batch(seed)
    v_rng = np.random.default_rng(seed + 50)
    for layer in range(net.n_layers):
        op = net.hvp_operator(layer, X, y)
        v = v_rng.standard_normal(op.dim)
        assert rel_err(op(v), fd_hvp(net, layer, X, y, v)) < 1e-4


def test_hvp_matches_dense_hessian_columns():
    net = small_net(9, dims=(3, 4, 2))
    X, y = small_batch(9, d=3, k=2)
    op = net.hvp_operator(0, X, y)
    H = np.column_stack([op(e) for e in np.eye(op.dim)])
    assert np.allclose(H, H.T, atol=1e-12)
    H_fd = np.column_stack([fd_hvp(net, 0, X, y, e) for e in np.eye(op.dim)])
    assert rel_err(H, H_fd) < 1e-6


def test_hvp_operator_ignores_later_weight_updates():
    net = small_net(1)
    X, y = small_batch(1)
    op = net.hvp_operator(0, X, y)
    v = np.ones(op.dim)
    before = op(v)
    net.weights[1] += 1.0
    assert np.array_equal(op(v), before)


def test_determinism():
    a = small_net(11, "relu").backward(*small_batch(11), [BF16, FP16, FP32])
    b = small_net(11, "relu").backward(*small_batch(11), [BF16, FP16, FP32])
    assert a.loss == b.loss
    assert all(np.array_equal(p[0], q[0]) for p, q in zip(a.grads, b.grads))
