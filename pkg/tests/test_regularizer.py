import numpy as np
import pytest

from models.network import Network
from src.errors import ContractError
from src.nodedrop.config import NodeDropConfig, NodeDropMode
from src.nodedrop.margins import bn_node_margins, node_margins
from src.nodedrop.regularizer import (
    network_regularization,
    regularization_grad,
    regularization_loss,
)
from src.tensor.gradcheck import central_difference, relative_error
from tests.conftest import bn_specs, kill_node

LAM = 1e-5


def cfg(**kw):
    return NodeDropConfig(**{"lambda": LAM, **kw})


def test_vanilla_loss_example():
    params = {"W": np.array([[1.0, -1.0]]), "b": np.array([0.0])}
    assert regularization_loss(params, cfg()) == pytest.approx(2e-5)


def test_zero_lambda_is_zero(rng):
    params = {"W": rng.normal(size=(4, 3)), "b": rng.normal(size=4)}
    config = NodeDropConfig(lambda_=0.0)
    assert regularization_loss(params, config) == 0.0
    grads = regularization_grad(params, config)
    assert not grads["W"].any() and not grads["b"].any()


def test_bn_loss_example():
    params = {"gamma": np.array([0.5]), "beta_shift": np.array([-1.0])}
    config = cfg(mode="batch_norm", batch_size=4)
    assert regularization_loss(params, config) == pytest.approx(1e-5)


def test_bn_loss_uses_explicit_count():
    params = {"gamma": np.array([0.5]), "beta_shift": np.array([-1.0])}
    config = cfg(mode="batch_norm", batch_size=4)
    assert regularization_loss(params, config, m=16) == pytest.approx(LAM * 0.5 * 4)
    with pytest.raises(ContractError):
        regularization_loss(params, config, m=1)


def test_vanilla_grad_examples():
    grads = regularization_grad({"W": np.array([[2.0, -3.0]]), "b": np.array([-1.0])}, cfg())
    np.testing.assert_array_equal(grads["W"], [[LAM, 0.0]])
    assert grads["b"][0] == 0.0  # sign(b + C) with b + C == 0
    grads = regularization_grad({"W": np.array([[0.0]]), "b": np.array([-2.0])}, cfg())
    assert grads["b"][0] == -LAM
    assert grads["W"][0, 0] == 0.0


def test_bn_grad_sign_zero():
    params = {"gamma": np.array([0.0, -2.0]), "beta_shift": np.array([-1.0, 3.0])}
    grads = regularization_grad(params, cfg(mode="batch_norm", batch_size=9))
    np.testing.assert_array_equal(grads["gamma"], [0.0, -LAM * 3])
    np.testing.assert_array_equal(grads["beta_shift"], [0.0, LAM])


def _away_from_kinks(rng, shape, offset=0.0):
    v = rng.normal(size=shape)
    v[np.abs(v + offset) < 1e-2] += 0.1
    return v


def test_vanilla_grad_matches_finite_differences(rng):
    config = cfg(c=1.0)
    W = _away_from_kinks(rng, (5, 7))
    b = _away_from_kinks(rng, 5, offset=1.0)
    grads = regularization_grad({"W": W, "b": b}, config)
    num_w = central_difference(lambda w: regularization_loss({"W": w, "b": b}, config), W.copy())
    num_b = central_difference(lambda bb: regularization_loss({"W": W, "b": bb}, config), b.copy())
    assert relative_error(grads["W"], num_w) < 1e-5
    assert relative_error(grads["b"], num_b) < 1e-5


def test_bn_grad_matches_finite_differences(rng):
    config = cfg(mode="batch_norm", batch_size=64)
    gamma = _away_from_kinks(rng, 6)
    shift = _away_from_kinks(rng, 6, offset=1.0)

    def loss(g, s):
        return regularization_loss({"gamma": g, "beta_shift": s}, config)

    grads = regularization_grad({"gamma": gamma, "beta_shift": shift}, config)
    num_gamma = central_difference(lambda g: loss(g, shift), gamma.copy())
    num_shift = central_difference(lambda s: loss(gamma, s), shift.copy())
    assert relative_error(grads["gamma"], num_gamma) < 1e-5
    assert relative_error(grads["beta_shift"], num_shift) < 1e-5


@pytest.mark.parametrize("step", [1.0, 10.0, 100.0])
def test_vanilla_step_never_raises_margin(rng, step):
    config = cfg(c=1.0)
    for _ in range(200):
        W = rng.normal(scale=0.5, size=(4, 6))
        b = rng.normal(scale=2.0, size=4)
        before = node_margins(W, b)
        grads = regularization_grad({"W": W, "b": b}, config)
        after = node_margins(W - step * grads["W"], b - step * grads["b"])
        live = before > -config.c
        assert np.all(after[live] <= before[live] + 1e-12)


@pytest.mark.parametrize("step", [1.0, 100.0])
def test_bn_step_never_raises_margin(rng, step):
    config = cfg(mode="batch_norm", batch_size=16)
    for _ in range(200):
        gamma = rng.normal(size=5)
        shift = rng.normal(scale=2.0, size=5)
        before = bn_node_margins(gamma, shift, 16)
        grads = regularization_grad({"gamma": gamma, "beta_shift": shift}, config)
        after = bn_node_margins(
            gamma - step * grads["gamma"], shift - step * grads["beta_shift"], 16
        )
        live = before > -config.c
        assert np.all(after[live] <= before[live] + 1e-12)


def test_network_regularization_keys(vanilla_net):
    loss, grads = network_regularization(vanilla_net, cfg())
    assert set(grads) == {"0.W", "0.b", "3.W", "3.b", "7.W", "7.b"}
    assert loss > 0


def test_network_regularization_skips_when_lambda_zero(vanilla_net):
    assert network_regularization(vanilla_net, NodeDropConfig(lambda_=0.0)) == (0.0, {})


def test_network_regularization_bn_uses_spatial_count(rng):
    model = Network.build(bn_specs(), (1, 8, 8), 3, rng, dtype=np.float64)
    config = cfg(mode=NodeDropMode.BATCH_NORM, batch_size=4)
    loss, grads = network_regularization(model, config)
    assert set(grads) == {"1.gamma", "1.beta_shift", "6.gamma", "6.beta_shift"}
    # gamma = 1, beta_shift = 0 at init: conv BN sees m*H*W = 256 values, dense BN m = 4
    expected = LAM * (4 * (np.sqrt(256) + 1) + 6 * (np.sqrt(4) + 1))
    assert loss == pytest.approx(expected)
    np.testing.assert_allclose(grads["1.gamma"], LAM * 16)


def test_dead_nodes_get_no_loss_gradient(vanilla_net, rng):
    kill_node(vanilla_net, 3, 2)
    kill_node(vanilla_net, 7, 5)
    x = rng.random((5, 1, 8, 8)).astype(np.float32)
    logits, caches = vanilla_net.forward(x)
    grads = vanilla_net.backward(caches, rng.normal(size=logits.shape).astype(np.float32))
    assert not grads[3]["W"][2].any() and grads[3]["b"][2] == 0
    assert not grads[7]["W"][5].any() and grads[7]["b"][5] == 0
