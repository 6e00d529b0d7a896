import numpy as np
import pytest

from adkd.backbone import BackboneConfig, build_backbone, export_weights, import_weights
from adkd.core import DimensionError, Graph, Precision, Tensor, backward, ops
from adkd.errors import ConfigError
from adkd.weights import NamedTensorError

DESK = BackboneConfig(16, (16, 32, 64), 1, False, (64, 64))


def closed_form_count(stem, widths, blocks, bn):
    """Weights plus one bias (or BN scale and shift) vector per convolution."""
    def conv(cin, cout, k):
        return cout * cin * k * k + (2 * cout if bn else cout)

    total = conv(3, stem, 7)
    cin = stem
    for i, cout in enumerate(widths):
        stride = 1 if i == 0 else 2
        for b in range(blocks):
            total += conv(cin, cout, 3) + conv(cout, cout, 3)
            if b == 0 and (stride != 1 or cin != cout):
                total += conv(cin, cout, 1)
            cin = cout
    return total


@pytest.mark.parametrize("stem, widths, blocks, bn", [
    (16, (16, 32, 64), 1, False),
    (8, (16, 16, 32), 2, True),
    (64, (64, 128, 256), 2, True),
])
def test_parameter_count(stem, widths, blocks, bn):
    net = build_backbone(BackboneConfig(stem, widths, blocks, bn, (32, 32)), 0)
    assert net.parameter_count() == closed_form_count(stem, widths, blocks, bn)


def test_resnet18_trunk_size():
    # conv1, bn1 and layer1..layer3 of torchvision resnet18 hold 2,782,784 parameters
    net = build_backbone(BackboneConfig(64, (64, 128, 256), 2, True, (256, 256)), 0)
    assert net.parameter_count() == 2_782_784


def test_pyramid_shapes():
    net = build_backbone(DESK, 1)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 64, 64)).astype(np.float32))
    pyr = net.forward(x)
    assert [k for k, _ in pyr] == [2, 3, 4]
    assert pyr.shapes() == [(2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4)]
    single = net.forward(Tensor(x.data[0]))
    np.testing.assert_allclose(single[3].data, pyr[3].data[0], rtol=1e-5, atol=1e-6)


def test_init_is_seeded_and_fan_in_scaled():
    a, b, c = build_backbone(DESK, 5), build_backbone(DESK, 5), build_backbone(DESK, 6)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)
    w = a.params["stage3.0.conv1.weight"].data
    bound = np.sqrt(6.0 / (16 * 9))
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.9 * bound


def test_frozen_net_exposes_no_trainables():
    net = build_backbone(DESK, 0, frozen=True)
    assert net.trainable_parameters() == {}
    assert net.parameter_count(trainable_only=True) == 0
    assert all(not p.requires_grad for p in net.params.values())


def test_frozen_gradient_flows_to_input_only():
    net = build_backbone(BackboneConfig(8, (8, 8, 8), 1, False, (16, 16)), 0, frozen=True,
                         precision=Precision.DOUBLE)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 3, 16, 16)), requires_grad=True, name="x")
    with Graph() as g:
        loss = ops.sum(net.forward(x)[4])
    assert np.abs(backward(g, loss, [x])["x"]).sum() > 0


def test_input_validation():
    net = build_backbone(DESK, 0)
    with pytest.raises(DimensionError):
        net.forward(Tensor(np.zeros((1, 3, 40, 40), np.float32)))
    with pytest.raises(DimensionError):
        net.forward(Tensor(np.zeros((1, 1, 64, 64), np.float32)))
    with pytest.raises(ConfigError):
        BackboneConfig(16, (16, 32, 64), 1, False, (60, 60))
    with pytest.raises(ConfigError):
        BackboneConfig(16, (16, 0, 64), 1, False, (64, 64))


def test_weights_round_trip(tmp_path):
    cfg = BackboneConfig(8, (8, 16, 16), 1, True, (32, 32))
    src = build_backbone(cfg, 3)
    path = tmp_path / "net.adkd"
    export_weights(src, path)
    dst = import_weights(build_backbone(cfg, 4), path)
    for name, arr in src.state_dict().items():
        np.testing.assert_array_equal(dst.state_dict()[name], arr)


def test_import_rejects_other_architecture(tmp_path):
    path = tmp_path / "net.adkd"
    export_weights(build_backbone(BackboneConfig(8, (8, 16, 16), 1, False, (32, 32)), 0), path)
    with pytest.raises(NamedTensorError):
        import_weights(build_backbone(BackboneConfig(8, (8, 16, 32), 1, False, (32, 32)), 0), path)
