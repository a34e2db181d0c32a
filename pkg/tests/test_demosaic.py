import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixtune.demosaic import (BUILTIN_IDS, blend, blend_adaptive, blend_map_image, demosaic,
                              export_blend_map, normalized_weights, register_demosaicer, DEMOSAICERS)
from pixtune.features import bayer_feature_spec
from pixtune.imaging import LAYOUTS, load_image, mosaic
from pixtune.model import CoefficientBlock, ParamMapperModel, ParamSpec, constant_model


@pytest.fixture
def rgb():
    rng = np.random.default_rng(0)
    base = np.cumsum(np.cumsum(rng.normal(size=(24, 24, 3)), 0), 1)
    return (base - base.min()) / np.ptp(base)


def blend_specs(n=3):
    return tuple(ParamSpec(f"w{k}", 0.0, 1.0) for k in range(n))


class TestDemosaicers:
    @pytest.mark.parametrize("name", BUILTIN_IDS)
    def test_constant_gray(self, name):
        m = mosaic(np.full((12, 12, 3), 0.42))
        np.testing.assert_allclose(demosaic(m, name), 0.42, atol=1e-14)

    @pytest.mark.parametrize("name", BUILTIN_IDS)
    @pytest.mark.parametrize("layout", LAYOUTS)
    def test_measured_sites_preserved(self, rgb, name, layout):
        m = mosaic(rgb, layout)
        out = demosaic(m, name)
        assert out.shape == rgb.shape
        np.testing.assert_array_equal(mosaic(out, layout).samples, m.samples)
        assert out.min() >= 0 and out.max() <= 1

    def test_edge_directed_beats_bilinear_on_edge(self):
        target = np.zeros((32, 32, 3))
        target[16:] = 0.8
        m = mosaic(target)
        err = {k: np.mean((demosaic(m, k) - target) ** 2) for k in ("bilinear", "edge-directed")}
        assert err["edge-directed"] < err["bilinear"]

    def test_bilinear_interpolates_green(self, rgb):
        m = mosaic(rgb, "RGGB")
        out = demosaic(m, "bilinear")
        s = m.samples
        # red site (2, 2): green is the mean of the four axial neighbors
        assert out[2, 2, 1] == pytest.approx((s[1, 2] + s[3, 2] + s[2, 1] + s[2, 3]) / 4)
        # blue at a green site on a red row comes from the two vertical blues
        assert out[2, 3, 2] == pytest.approx((s[1, 3] + s[3, 3]) / 2)

    def test_gradient_corrected_exact_on_linear_ramp(self):
        y, x = np.mgrid[0:16, 0:16] / 40.0
        ramp = np.stack([0.1 + x + y, 0.2 + 0.5 * x, 0.3 + 0.5 * y], axis=-1)
        out = demosaic(mosaic(ramp), "gradient-corrected")
        np.testing.assert_allclose(out[3:-3, 3:-3], ramp[3:-3, 3:-3], atol=1e-12)

    def test_unknown(self, rgb):
        with pytest.raises(ValueError):
            demosaic(mosaic(rgb), "ari")

    def test_register(self, rgb):
        register_demosaicer("nearest-test", lambda m: np.repeat(m.samples[..., None], 3, axis=2))
        try:
            assert demosaic(mosaic(rgb), "nearest-test").shape == rgb.shape
            with pytest.raises(ValueError):
                register_demosaicer("nearest-test", None)
        finally:
            DEMOSAICERS.pop("nearest-test")


class TestBlend:
    def test_equal_weights_mean(self, rgb):
        outs = [rgb, rgb ** 2, np.sqrt(rgb)]
        field = np.full(rgb.shape[:2] + (3,), 0.3)
        np.testing.assert_allclose(blend(outs, field), sum(outs) / 3, atol=1e-15)

    def test_one_hot(self, rgb):
        outs = [rgb, rgb ** 2, np.sqrt(rgb)]
        field = np.zeros(rgb.shape[:2] + (3,))
        field[..., 1] = 1
        np.testing.assert_array_equal(blend(outs, field), outs[1])

    def test_published_global_weights(self, rgb):
        outs = [rgb, rgb ** 2, np.sqrt(rgb)]
        field = np.broadcast_to([0.50, 0.44, 0.06], rgb.shape[:2] + (3,))
        np.testing.assert_allclose(blend(outs, field), 0.50 * outs[0] + 0.44 * outs[1] + 0.06 * outs[2],
                                   atol=1e-15)

    def test_underflow_falls_back_to_uniform(self, rgb):
        outs = [rgb, 1 - rgb]
        field = np.zeros(rgb.shape[:2] + (2,))
        np.testing.assert_allclose(blend(outs, field), 0.5, atol=1e-15)

    def test_errors(self, rgb):
        with pytest.raises(ValueError):
            blend([rgb], np.ones(rgb.shape[:2] + (1,)))
        with pytest.raises(ValueError):
            blend([rgb, rgb[:-2]], np.ones(rgb.shape[:2] + (2,)))
        with pytest.raises(ValueError):
            blend([rgb, rgb], np.ones(rgb.shape[:2] + (3,)))


class TestAdaptive:
    def test_global_model_is_constant_mix(self, rgb):
        m = mosaic(rgb)
        model = constant_model("blend", blend_specs(), (0.5, 0.3, 0.2))
        outs = [demosaic(m, k) for k in BUILTIN_IDS]
        np.testing.assert_allclose(blend_adaptive(m, model),
                                   0.5 * outs[0] + 0.3 * outs[1] + 0.2 * outs[2], atol=1e-14)

    def test_saturated_weight(self, rgb):
        m = mosaic(rgb)
        spec = bayer_feature_spec()
        F = spec.F
        blocks = []
        for h in (-30.0, 30.0, -30.0):
            b = CoefficientBlock.zeros(F)
            blocks.append(CoefficientBlock(h, b.theta1, b.theta2))
        params = tuple(ParamSpec(p.name, 0.0, 1.0, None, b) for p, b in zip(blend_specs(), blocks))
        model = ParamMapperModel("blend", params, spec)
        out = blend_adaptive(m, model)
        assert np.max(np.abs(out - demosaic(m, "gradient-corrected"))) < 1e-3

    def test_mismatch(self, rgb):
        m = mosaic(rgb)
        with pytest.raises(ValueError):
            blend_adaptive(m, constant_model("blend", blend_specs(2), (0.5, 0.5)))
        with pytest.raises(ValueError):
            blend_adaptive(m, constant_model("tv", (ParamSpec("p0", 0, 1),), (0.5,)))


class TestBlendMap:
    def test_uniform_is_gray(self):
        img = blend_map_image(np.full((4, 4, 3), 0.7))
        np.testing.assert_allclose(img, 1 / 3)

    def test_one_hot_primary(self, tmp_path):
        field = np.zeros((4, 6, 3))
        field[..., 2] = 0.9
        export_blend_map(field, tmp_path / "map.png")
        img = load_image(tmp_path / "map.png")
        np.testing.assert_array_equal(img[..., 2], 1.0)
        np.testing.assert_array_equal(img[..., :2], 0.0)

    def test_channels_sum_to_one(self, tmp_path):
        field = np.random.default_rng(2).random((5, 5, 3))
        export_blend_map(field, tmp_path / "map.png")
        img = load_image(tmp_path / "map.png")
        assert np.max(np.abs(img.sum(axis=-1) - 1)) <= 1.5 / 255

    def test_too_many_factors(self):
        with pytest.raises(ValueError):
            blend_map_image(np.ones((2, 2, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_blend_properties(seed, scale):
    rng = np.random.default_rng(seed)
    outs = [rng.random((6, 6, 3)) for _ in range(3)]
    w = rng.random((6, 6, 3)) + 1e-3
    out = blend(outs, w)
    stack = np.stack(outs)
    assert np.all(out >= stack.min(axis=0) - 1e-12) and np.all(out <= stack.max(axis=0) + 1e-12)
    np.testing.assert_allclose(blend(outs, w * scale), out, atol=1e-12)
    perm = [2, 0, 1]
    np.testing.assert_allclose(blend([outs[k] for k in perm], w[..., perm]), out, atol=1e-12)
    np.testing.assert_allclose(normalized_weights(w).sum(axis=-1), 1.0, atol=1e-12)
