import numpy as np
import pytest
import torch
import torch.nn as nn

from modules.Modules.Attribution import AttributionMap, gradcam, normalize
from modules.Modules.Attribution.Attributor import attribute
from modules.Modules.Attribution.IBA import FeatureStats, InformationBottleneck, iba, iba_fit_statistics
from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.Harness.Network import ArchConfig, build_model
from modules.utils.Errors import InvalidArgument


class BottleneckToyNet(nn.Module):
    """瓶颈层输出恒为5，只有掩码保住这个值时第0类才不被惩罚"""

    def __init__(self):
        super().__init__()
        self.bottleneck = nn.Conv2d(3, 1, kernel_size=1)
        with torch.no_grad():
            self.bottleneck.weight.zero_()
            self.bottleneck.bias.fill_(5.0)

    def forward(self, x):
        z = self.bottleneck(x)
        logit = 1000.0 * (z.mean(dim=(1, 2, 3)) - 5.0)
        return torch.stack([logit, torch.zeros_like(logit)], dim=1)


def _unit_stats():
    return FeatureStats(mean=np.zeros(1, dtype=np.float32), std=np.ones(1, dtype=np.float32), count=1)


def test_normalize_range_and_constant_map():
    values = normalize(np.array([[1.0, 3.0], [2.0, 5.0]]))
    assert values.min() == 0.0 and values.max() == 1.0
    assert np.all(normalize(np.full((3, 3), 7.0)) == 0.0)


def test_attribution_map_validates_values():
    with pytest.raises(InvalidArgument):
        AttributionMap(np.zeros(4), 0, "gradcam")
    with pytest.raises(InvalidArgument):
        AttributionMap(np.array([[0.0, -0.1]]), 0, "gradcam")
    with pytest.raises(InvalidArgument):
        AttributionMap(np.array([[0.0, np.nan]]), 0, "gradcam")


def test_attribution_map_file_round_trip(tmp_path):
    original = AttributionMap(np.random.default_rng(0).random((6, 5)), 3, "iba").normalized_copy()
    path = str(tmp_path / "maps" / "iba_0.f32")
    original.save(path)
    loaded = AttributionMap.load(path)
    assert loaded.method == "iba" and loaded.target_class == 3 and loaded.normalized
    np.testing.assert_array_equal(loaded.values, original.values)


def test_gradcam_matches_closed_form(cam_toy_net):
    image = torch.rand(1, 8, 8, generator=torch.Generator().manual_seed(1))
    target = 1
    result = gradcam(cam_toy_net, image, target)
    with torch.no_grad():
        activation = cam_toy_net.conv(image[None])[0]
        height, width = activation.shape[-2:]
        weights = cam_toy_net.head[target] / (height * width)
        expected = normalize(torch.relu((weights[:, None, None] * activation).sum(dim=0)).numpy())
    assert result.method == "gradcam" and result.normalized
    assert result.shape == (8, 8)
    np.testing.assert_allclose(result.values, expected, atol=1e-5)


def test_gradcam_invariant_to_head_scale(cam_toy_net):
    image = torch.rand(1, 8, 8, generator=torch.Generator().manual_seed(2))
    before = gradcam(cam_toy_net, image, 0)
    with torch.no_grad():
        cam_toy_net.head.mul_(2.0)
    after = gradcam(cam_toy_net, image, 0)
    np.testing.assert_allclose(before.values, after.values, atol=1e-5)
    assert np.argmax(before.values) == np.argmax(after.values)


def test_gradcam_on_resnet_upsamples_to_input():
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    result = gradcam(model, np.random.default_rng(0).random((3, 16, 16), dtype=np.float32), 4)
    assert result.shape == (16, 16)
    assert result.values.min() >= 0.0 and result.values.max() <= 1.0
    with pytest.raises(InvalidArgument):
        gradcam(model, np.zeros((3, 16, 16), dtype=np.float32), 6)


def test_fit_statistics_floors_degenerate_channels():
    model = BottleneckToyNet().eval()
    images = np.random.default_rng(0).random((4, 3, 8, 8), dtype=np.float32)
    stats = iba_fit_statistics(model, model.bottleneck, images, min_images=4)
    assert stats.mean[0] == pytest.approx(5.0)
    assert stats.std[0] == pytest.approx(1e-6)
    assert stats.degenerate == (0,)
    assert stats.count == 4 * 8 * 8
    with pytest.raises(InvalidArgument):
        iba_fit_statistics(model, model.bottleneck, images, min_images=5)
    with pytest.raises(InvalidArgument):
        iba_fit_statistics(model, model.bottleneck, images[:0], min_images=1)


def test_fit_statistics_agree_across_calibration_halves():
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=3).eval()
    images = np.random.default_rng(4).random((1000, 3, 16, 16), dtype=np.float32)
    first = iba_fit_statistics(model, "stage2", images[:500], min_images=100)
    second = iba_fit_statistics(model, "stage2", images[500:], min_images=100)
    assert first.count == second.count == 500 * 8 * 8
    scale = np.maximum(first.std, second.std)
    # 均值差按通道尺度衡量，标准差按相对误差衡量
    assert np.all(np.abs(first.mean - second.mean) <= 0.05 * scale)
    assert np.all(np.abs(first.std - second.std) <= 0.05 * scale)


def test_feature_stats_require_positive_count():
    with pytest.raises(InvalidArgument):
        FeatureStats(mean=np.zeros(1), std=np.ones(1), count=0)


def test_iba_small_beta_keeps_mask_open():
    model = BottleneckToyNet().eval()
    image = np.full((3, 8, 8), 0.5, dtype=np.float32)
    bottleneck = InformationBottleneck(model, model.bottleneck, _unit_stats(), beta=1e-6, steps=10, samples=4)
    mask, capacity = bottleneck.fit_mask(image, 0, np.random.default_rng(0))
    assert mask.shape == (8, 8)
    assert mask.mean() > 0.99


def test_iba_large_beta_closes_mask():
    model = BottleneckToyNet().eval()
    image = np.full((3, 8, 8), 0.5, dtype=np.float32)
    capacities = {}
    for beta in (10.0, 1e4):
        bottleneck = InformationBottleneck(model, model.bottleneck, _unit_stats(), beta=beta, steps=10, samples=4)
        _, capacity = bottleneck.fit_mask(image, 0, np.random.default_rng(0))
        assert capacity.min() >= 0.0
        capacities[beta] = float(capacity.sum())
    assert capacities[1e4] < 0.01 * capacities[10.0]


def test_iba_rejects_bad_beta():
    model = BottleneckToyNet()
    with pytest.raises(InvalidArgument):
        InformationBottleneck(model, model.bottleneck, _unit_stats(), beta=0.0)


def test_iba_is_deterministic_for_fixed_rng():
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    images = np.random.default_rng(1).random((8, 3, 16, 16), dtype=np.float32)
    stats = iba_fit_statistics(model, "stage2", images, min_images=8)
    first = iba(model, images[0], 2, 10.0, 3, stats, np.random.default_rng(9), samples=2)
    second = iba(model, images[0], 2, 10.0, 3, stats, np.random.default_rng(9), samples=2)
    assert first.shape == (16, 16) and first.method == "iba"
    np.testing.assert_array_equal(first.values, second.values)


def test_iba_rejects_stats_from_other_layer():
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    stats = FeatureStats(mean=np.zeros(8), std=np.ones(8), count=1, layer="stage2")
    with pytest.raises(InvalidArgument):
        InformationBottleneck(model, "stage3", stats)


def test_attribute_dispatch():
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    config = ExperimentConfig(image_size=16, cutout_side=8)
    image = np.random.default_rng(0).random((3, 16, 16), dtype=np.float32)
    assert attribute("gradcam", model, image, 1, config).method == "gradcam"
    with pytest.raises(InvalidArgument):
        attribute("lime", model, image, 1, config)
    with pytest.raises(InvalidArgument):
        attribute("iba", model, image, 1, config, stats=None, rng=np.random.default_rng(0))
