import numpy as np
import pandas as pd
import pytest

from models.network import Network
from models.presets import get_preset
from src.errors import StructuralError
from src.nodedrop.config import NodeDropConfig, NodeDropMode
from src.nodedrop.scan import REPORT_COLUMNS, scan_network
from src.tensor.ops import make_rng
from tests.conftest import RELU, kill_node, vanilla_specs

VANILLA = NodeDropConfig(lambda_=1e-5)


def rows(W):
    return W.reshape(W.shape[0], -1)


def test_fresh_dense160_scan():
    preset = get_preset("dense160")
    model = Network.build(preset.specs, preset.input_shape, preset.num_classes, make_rng(0))
    report = scan_network(model, VANILLA)
    assert report.total_nodes == 160
    # zero bias: a node is dead at init only if none of its fan-in weights is positive
    no_positive = sum(
        int((~(rows(model.states[u.layer].W) > 0).any(axis=1)).sum())
        for u in model.prunable_units(NodeDropMode.VANILLA)
    )
    assert report.dead_nodes == no_positive
    if no_positive == 0:
        assert report.live_params == report.total_params == model.param_count()
        assert report.reduction_factor == pytest.approx(1.0)
    assert [l.nodes for l in report.layers] == [16, 16, 32, 32, 64]


def test_forced_node_is_the_only_dead_one(vanilla_net):
    kill_node(vanilla_net, 3, 4)
    report = scan_network(vanilla_net, VANILLA)
    assert report.dead_nodes == 1
    layer = next(l for l in report.layers if l.layer == 3)
    assert np.flatnonzero(layer.dead_mask).tolist() == [4]
    assert layer.margins[4] <= -1.0


def test_parameter_accounting_counts_live_endpoints(vanilla_net):
    # conv 3 has 6 filters of 4x3x3 feeding dense 7 through a 2x2 spatial flatten
    kill_node(vanilla_net, 3, 0)
    report = scan_network(vanilla_net, VANILLA)
    removed = (4 * 9 + 1) + 8 * 4
    assert report.live_params == vanilla_net.param_count() - removed


def test_weak_dead_never_exceeds_dead(vanilla_net, rng):
    for layer in (0, 3, 7):
        b = vanilla_net.states[layer].b
        b[:] = rng.normal(scale=3.0, size=b.shape)
    report = scan_network(vanilla_net, VANILLA)
    for l in report.layers:
        assert l.weak_dead_nodes <= l.dead_nodes


def test_output_layer_is_not_scanned(vanilla_net):
    vanilla_net.states[9].b[:] = -100.0
    report = scan_network(vanilla_net, VANILLA)
    assert 9 not in [l.layer for l in report.layers]


def test_unbounded_input_is_a_structural_error(rng):
    specs = vanilla_specs()
    specs[4] = RELU
    model = Network.build(specs, (1, 8, 8), 3, rng)
    with pytest.raises(StructuralError) as err:
        scan_network(model, VANILLA)
    assert err.value.layer_index == 7


def test_bn_scan_uses_effective_count(bn_net):
    config = NodeDropConfig(lambda_=1e-5, mode=NodeDropMode.BATCH_NORM, batch_size=4)
    bn_net.states[1].gamma[:] = 0.1
    bn_net.states[1].beta_shift[:] = [-1.0, -2.0, 0.0, -1.7]
    report = scan_network(bn_net, config)
    conv = report.layers[0]
    # conv BN normalizes m*H*W = 256 values per channel: 0.1 * 16 = 1.6
    np.testing.assert_allclose(conv.margins, [0.6, -0.4, 1.6, -0.1], rtol=1e-6)
    assert conv.layer == 0 and conv.dead_nodes == 2


def test_report_frame_and_csv(vanilla_net, tmp_path):
    kill_node(vanilla_net, 0, 1)
    report = scan_network(vanilla_net, VANILLA)
    frame = report.to_frame()
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame["dead_nodes"].tolist() == [1, 0, 0]
    report.to_csv(tmp_path / "liveness.csv")
    pd.testing.assert_frame_equal(pd.read_csv(tmp_path / "liveness.csv"), frame)
    text = report.summary()
    assert "parameters:" in text and "nodes: 17 live / 18 prunable" in text


def test_reduction_factor_undefined_without_live_params(rng):
    model = Network.build(vanilla_specs(), (1, 8, 8), 3, rng)
    report = scan_network(model, VANILLA)
    empty = report.__class__(
        mode=report.mode, layers=report.layers, live_params=0, total_params=10, fingerprint=""
    )
    assert empty.reduction_factor is None
