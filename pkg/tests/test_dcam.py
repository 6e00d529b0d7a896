import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adkd.backbone import FeaturePyramid
from adkd.core import Tensor
from adkd.dcam import AttentionMode, build_dcam, channel_attention, refine, refine_pyramid, spatial_attention
from adkd.errors import ConfigError

WIDTHS = (8, 16, 16)


def _params(mode="combined", seed=0, reduction=4):
    return build_dcam(WIDTHS, mode, reduction=reduction, seed=seed, precision="double")


def reference_channel_gate(feat, w0, w1):
    """Per-channel gate computed channel by channel with explicit pooling."""
    c = feat.shape[0]
    avg = np.array([feat[d].mean() for d in range(c)])
    mx = np.array([feat[d].max() for d in range(c)])

    def mlp(v):
        return w1 @ np.maximum(w0 @ v, 0.0)

    return 1.0 / (1.0 + np.exp(-(mlp(avg) + mlp(mx))))


def test_channel_gate_matches_reference(rng):
    p = _params()
    for k, c in zip((2, 3, 4), WIDTHS):
        feat = rng.normal(size=(c, 5, 6))
        gate = channel_attention(Tensor(feat), p.channel[k]).data
        assert gate.shape == (c, 1, 1)
        want = reference_channel_gate(feat, p.channel[k].w0.data, p.channel[k].w1.data)
        np.testing.assert_allclose(gate[:, 0, 0], want, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_channel_gate_ignores_spatial_order(seed):
    rng = np.random.default_rng(seed)
    p = _params(seed=seed % 7)
    feat = rng.normal(size=(2, 8, 4, 5))
    flat = feat.reshape(2, 8, -1)
    shuffled = flat[:, :, rng.permutation(20)].reshape(feat.shape)
    a = channel_attention(Tensor(feat), p.channel[2]).data
    b = channel_attention(Tensor(shuffled), p.channel[2]).data
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert np.all((a > 0) & (a < 1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_spatial_gate_ignores_channel_order(seed):
    rng = np.random.default_rng(seed)
    p = _params(seed=seed % 7)
    feat = rng.normal(size=(2, 16, 6, 6))
    a = spatial_attention(Tensor(feat), p.spatial[3]).data
    b = spatial_attention(Tensor(feat[:, rng.permutation(16)]), p.spatial[3]).data
    assert a.shape == (2, 1, 6, 6)
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert np.all((a > 0) & (a < 1))


def test_mode_none_is_identity(rng):
    feat = Tensor(rng.normal(size=(8, 4, 4)))
    assert refine(feat, "none") is feat
    p = _params("none")
    assert p.named_parameters() == {}
    pyr = FeaturePyramid([(2, feat)])
    out = refine_pyramid(pyr, p)
    assert out[2] is feat


def test_refine_applies_gates_in_order(rng):
    p = _params("combined")
    feat = Tensor(rng.normal(size=(8, 5, 5)))
    after_channel = channel_attention(feat, p.channel[2]).data * feat.data
    want = spatial_attention(Tensor(after_channel), p.spatial[2]).data * after_channel
    np.testing.assert_allclose(refine(feat, "combined", p.channel[2], p.spatial[2]).data, want, atol=1e-15)


@pytest.mark.parametrize("mode, n_channel, n_spatial", [
    ("none", 0, 0), ("channel", 3, 0), ("spatial", 0, 3), ("combined", 3, 3),
])
def test_parameters_per_mode(mode, n_channel, n_spatial):
    p = _params(mode)
    assert len(p.channel) == n_channel and len(p.spatial) == n_spatial
    assert AttentionMode(mode).uses_channel == (n_channel > 0)


def test_state_round_trip():
    a, b = _params(seed=1), _params(seed=2)
    b.load_state_dict(a.state_dict())
    for name, arr in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[name], arr)


def test_configuration_errors(rng):
    with pytest.raises(ConfigError):
        build_dcam((6, 16, 16), "channel", reduction=4)
    with pytest.raises(ConfigError):
        build_dcam(WIDTHS, "channel", reduction=0)
    with pytest.raises(ValueError):
        AttentionMode("both")
    p = _params("channel")
    with pytest.raises(ConfigError):
        refine(Tensor(rng.normal(size=(8, 3, 3))), "spatial", p.channel[2], None)
    with pytest.raises(ConfigError):
        channel_attention(Tensor(rng.normal(size=(4, 3, 3))), p.channel[2])
