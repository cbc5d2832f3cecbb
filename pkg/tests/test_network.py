import numpy as np
import pytest

from models.network import Network
from models.presets import PRESET_NAMES, get_preset
from src.errors import ConfigError, DimensionError, StructuralError
from src.nn.layers import SPEC_LIST, ActivationSpec, DenseSpec, FlattenSpec
from src.nodedrop.config import NodeDropMode
from src.tensor.gradcheck import central_difference, relative_error
from src.tensor.ops import make_rng
from tests.conftest import RELU, bn_specs, vanilla_specs


def test_shapes_are_inferred(vanilla_net):
    assert vanilla_net.shapes[0] == (1, 8, 8)
    assert vanilla_net.shapes[-1] == (3,)
    assert vanilla_net.shapes[7] == (24,)


def test_mismatched_layers_are_rejected(rng):
    specs = [FlattenSpec(), DenseSpec(in_features=10, out_features=3)]
    with pytest.raises(DimensionError):
        Network.build(specs, (1, 4, 4), 3, rng)


def test_output_width_must_match_classes(rng):
    with pytest.raises(DimensionError):
        Network.build(vanilla_specs(), (1, 8, 8), 4, rng)


def test_spec_list_round_trips_through_json():
    specs = bn_specs()
    assert SPEC_LIST.validate_json(SPEC_LIST.dump_json(specs)) == specs


def test_parameters_are_views(vanilla_net):
    params = vanilla_net.parameters()
    params["0.b"][0] = 5.0
    assert vanilla_net.states[0].b[0] == 5.0
    assert set(params) == {"0.W", "0.b", "3.W", "3.b", "7.W", "7.b", "9.W", "9.b"}


def test_fingerprint_tracks_parameters(vanilla_net):
    before = vanilla_net.fingerprint()
    assert vanilla_net.copy().fingerprint() == before
    vanilla_net.states[3].W[0, 0, 0, 0] += 1
    assert vanilla_net.fingerprint() != before


def test_network_backward_matches_finite_differences(rng):
    model = Network.build(vanilla_specs(), (1, 8, 8), 3, rng, dtype=np.float64)
    for state in model.states:
        if state.b is not None:
            state.b[:] = rng.uniform(0.1, 0.3, state.b.shape)
    x = rng.random((3, 1, 8, 8))
    weights = rng.normal(size=(3, 3))

    def loss():
        return float((model.forward(x)[0] * weights).sum())

    _, caches = model.forward(x)
    grads = model.backward(caches, weights)
    for key, param in model.parameters().items():
        layer, name = key.split(".")

        def f(value, param=param):
            saved = param.copy()
            param[...] = value
            out = loss()
            param[...] = saved
            return out

        numeric = central_difference(f, param.copy())
        assert relative_error(grads[int(layer)][name], numeric) < 1e-4, key


def test_prunable_units(vanilla_net, bn_net):
    assert [u.layer for u in vanilla_net.prunable_units(NodeDropMode.VANILLA)] == [0, 3, 7]
    units = bn_net.prunable_units(NodeDropMode.BATCH_NORM)
    assert [(u.layer, u.norm_layer) for u in units] == [(0, 1), (5, 6)]


def test_vanilla_validation_rejects_unbounded_input(rng):
    specs = vanilla_specs()
    specs[1] = RELU
    model = Network.build(specs, (1, 8, 8), 3, rng)
    with pytest.raises(StructuralError) as err:
        model.validate(NodeDropMode.VANILLA)
    assert err.value.layer_index == 3


def test_vanilla_validation_needs_activation_after_prunable_layer(rng):
    specs = [
        FlattenSpec(),
        DenseSpec(in_features=4, out_features=4),
        DenseSpec(in_features=4, out_features=2),
    ]
    model = Network.build(specs, (1, 2, 2), 2, rng)
    with pytest.raises(StructuralError) as err:
        model.validate(NodeDropMode.VANILLA)
    assert err.value.layer_index == 1


def test_vanilla_validation_accepts_clamped_relu(rng):
    specs = vanilla_specs()
    specs[1] = ActivationSpec(activation="clamped_relu")
    Network.build(specs, (1, 8, 8), 3, rng).validate(NodeDropMode.VANILLA)
    Network.build(vanilla_specs(), (1, 8, 8), 3, rng).validate("vanilla")


def test_first_nonfinite_layer(vanilla_net, rng):
    vanilla_net.states[7].W[0, 0] = np.inf
    x = rng.random((2, 1, 8, 8)).astype(np.float32)
    assert vanilla_net.first_nonfinite_layer(x) == 7
    assert np.isinf(vanilla_net.states[7].W[0, 0])


def test_predict_chunks_equal_single_pass(vanilla_net, rng):
    x = rng.random((7, 1, 8, 8)).astype(np.float32)
    expected = vanilla_net.forward(x, "eval")[0]
    np.testing.assert_array_equal(vanilla_net.predict(x, batch_size=3), expected)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_build(name):
    preset = get_preset(name, width_scale=0.0625)
    model = Network.build(preset.specs, preset.input_shape, preset.num_classes, make_rng(0))
    model.validate(preset.mode)


def test_dense160_has_160_prunable_nodes():
    preset = get_preset("dense160")
    assert preset.prunable_nodes == 16 + 16 + 32 + 32 + 64
    assert preset.defaults["batch_size"] == 1024


def test_bn_suffix_selects_batch_norm_mode():
    preset = get_preset("dense320_bn")
    assert preset.mode is NodeDropMode.BATCH_NORM
    assert preset.name == "dense320_bn"


def test_vgg_head_is_512():
    preset = get_preset("vgg16_cifar", width_scale=0.125)
    dense = [s for s in preset.specs if isinstance(s, DenseSpec)]
    assert dense[0].out_features == 512
    assert sum(1 for s in preset.specs if s.kind == "conv2d") == 13


def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset("resnet50")
