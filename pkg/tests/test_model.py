import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixtune.features import FeatureMap, FeatureSpec, anlm_feature_spec
from pixtune.model import (CoefficientBlock, ParamMapperModel, ParamSpec, block_size,
                           constant_model, embed_global, eval_h, feature_stats, load_model,
                           map_field, map_param, normalize_features, pack, round_odd, save_model,
                           unpack)


def anlm_params():
    return (ParamSpec("p0", 3, 21, "odd"), ParamSpec("p1", 0.05, 1.5))


def random_model(F, seed=0, spec=None):
    rng = np.random.default_rng(seed)
    spec = spec or anlm_feature_spec()
    blocks = [CoefficientBlock.unpack(rng.normal(size=block_size(F)), F) for _ in range(2)]
    params = tuple(ParamSpec(p.name, p.p_min, p.p_max, p.discrete, b)
                   for p, b in zip(anlm_params(), blocks))
    norm = np.column_stack([rng.random(F), rng.random(F) + 0.5])
    norm[0] = (0, 1)
    return ParamMapperModel("anlm", params, spec, norm)


class TestEvalH:
    def test_zero(self):
        f = np.random.default_rng(0).normal(size=(5, 4))
        np.testing.assert_array_equal(eval_h(f, CoefficientBlock.zeros(4)), 0.0)

    def test_unary(self):
        assert eval_h([1.0], CoefficientBlock(0.5, [0.25], [0.25])) == pytest.approx(1.0)

    def test_single_monomial(self):
        # triangle order (0,0), (0,1), (1,1)
        assert eval_h([1.0, 2.0], CoefficientBlock(0, [0, 0], [0, 0, 3])) == pytest.approx(12.0)

    def test_matches_dense(self):
        rng = np.random.default_rng(1)
        F = 6
        b = CoefficientBlock.unpack(rng.normal(size=block_size(F)), F)
        T = np.zeros((F, F))
        k = 0
        for i in range(F):
            for j in range(i, F):
                T[i, j] = b.theta2[k]
                k += 1
        for _ in range(20):
            f = rng.normal(size=F)
            assert eval_h(f, b) == pytest.approx(b.theta0 + b.theta1 @ f + f @ T @ f, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            eval_h([1.0, 2.0], CoefficientBlock.zeros(3))


class TestMapParam:
    def test_midpoint(self):
        spec = ParamSpec("p", 0.0, 4.0)
        assert spec.map_h(0.0) == 2.0

    def test_closed_form(self):
        assert ParamSpec("p", 0.0, 1.0).map_h(math.log(3)) == pytest.approx(0.75)

    def test_odd_tie_goes_down(self):
        assert ParamSpec("p0", 3, 21, "odd").map_h(0.0) == 11.0

    def test_round_odd(self):
        np.testing.assert_array_equal(round_odd([4.0, 4.1, 5.0, 5.9, 6.0, 6.01]), [3, 5, 5, 5, 5, 7])

    def test_saturation(self):
        spec = ParamSpec("p", 1.0, 2.0)
        assert spec.map_h(-800.0) == 1.0
        assert spec.map_h(800.0) == 2.0
        odd = ParamSpec("p0", 3, 21, "odd")
        assert odd.map_h(-1e4) == 3.0 and odd.map_h(1e4) == 21.0

    def test_inverse(self):
        spec = ParamSpec("p1", 0.05, 1.5)
        assert spec.map_h(spec.h_for(0.4)) == pytest.approx(0.4, abs=1e-14)
        with pytest.raises(ValueError):
            spec.h_for(1.5)

    def test_monotone(self):
        spec = ParamSpec("p", -1.0, 3.0)
        h = np.linspace(-20, 20, 1001)
        assert np.all(np.diff(spec.map_h(h)) >= 0)
        assert np.all(np.diff(spec.map_h(np.linspace(-5, 5, 101))) > 0)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            ParamSpec("p", 1.0, 1.0)


class TestPacking:
    def test_lengths(self):
        assert pack(constant_model("anlm", anlm_params(), (5, 0.4))).size == 6
        assert pack(random_model(7)).size == 72

    def test_round_trip(self):
        m = random_model(7, seed=3)
        v = pack(m)
        np.testing.assert_array_equal(pack(unpack(v, m)), v)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            unpack(np.zeros(71), random_model(7))


class TestNormalization:
    def test_identity(self):
        v = np.random.default_rng(0).random((4, 4, 3))
        v[..., 0] = 1
        out = normalize_features(FeatureMap(v), np.array([[0, 1], [0, 1], [0, 1]], dtype=float))
        np.testing.assert_array_equal(out.values, v)

    def test_zscore_of_training_set(self):
        rng = np.random.default_rng(1)
        maps = []
        for _ in range(3):
            v = rng.random((6, 7, 4)) * [1, 5, 0.01, 100]
            v[..., 0] = 1
            maps.append(FeatureMap(v))
        stats = feature_stats(maps)
        pooled = np.concatenate([normalize_features(m, stats).values.reshape(-1, 4) for m in maps])
        np.testing.assert_array_equal(pooled[:, 0], 1.0)
        np.testing.assert_allclose(pooled[:, 1:].mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(pooled[:, 1:].std(axis=0), 1, atol=1e-6)

    def test_constant_feature_std_floor(self):
        v = np.ones((3, 3, 2))
        out = normalize_features(FeatureMap(v), feature_stats([FeatureMap(v)]))
        assert np.all(np.isfinite(out.values))


class TestFields:
    def test_zero_model_midpoints(self):
        spec = FeatureSpec()
        params = tuple(ParamSpec(p.name, p.p_min, p.p_max, p.discrete, CoefficientBlock.zeros(1))
                       for p in anlm_params())
        m = ParamMapperModel("anlm", params, spec)
        f = map_field(FeatureMap(np.ones((3, 4, 1))), m)
        np.testing.assert_array_equal(f["p0"], 11.0)
        np.testing.assert_allclose(f["p1"], 0.775)

    def test_constant_model(self):
        m = constant_model("anlm", anlm_params(), (9, 0.51))
        f = map_field(FeatureMap(np.ones((5, 5, 1))), m)
        np.testing.assert_array_equal(f["p0"], 9.0)
        np.testing.assert_allclose(f["p1"], 0.51, atol=1e-14)

    def test_embedding_is_exact(self):
        warm = constant_model("anlm", anlm_params(), (7, 0.45))
        warm = unpack(pack(warm) + np.array([0.1, -0.3, 0.2, 0.05, 0.4, -0.1]), warm)
        rng = np.random.default_rng(2)
        stats = np.column_stack([rng.random(7), rng.random(7) + 0.1])
        stats[0] = (0, 1)
        lifted = embed_global(warm, anlm_feature_spec(), stats)
        raw = FeatureMap(np.concatenate([np.ones((9, 9, 1)), rng.random((9, 9, 6))], axis=-1))
        a = map_field(raw, lifted).values
        b = map_field(FeatureMap(np.ones((9, 9, 1))), warm).values
        np.testing.assert_array_equal(a, b)

    def test_raw_maps_are_normalized_with_model_stats(self):
        m = random_model(7, seed=5)
        raw = FeatureMap(np.random.default_rng(3).random((4, 4, 7)))
        direct = map_field(normalize_features(raw, m.feature_norm), m).values
        np.testing.assert_array_equal(map_field(raw, m).values, direct)

    def test_f_mismatch(self):
        with pytest.raises(ValueError):
            map_field(FeatureMap(np.ones((2, 2, 3))), random_model(7))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        m = random_model(7, seed=9)
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(pack(back), pack(m))
        np.testing.assert_array_equal(back.feature_norm, m.feature_norm)
        assert back.feature_spec == m.feature_spec
        assert back.names == m.names and back.params[0].discrete == "odd"
        f = FeatureMap(np.random.default_rng(0).random((5, 5, 7)))
        np.testing.assert_array_equal(map_field(f, back).values, map_field(f, m).values)

    def test_inconsistent_file(self, tmp_path):
        import json
        m = random_model(7)
        save_model(m, tmp_path / "m.json")
        d = json.loads((tmp_path / "m.json").read_text())
        d["F"] = 3
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(ValueError):
            load_model(tmp_path / "m.json")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 50.0))
def test_mapped_parameters_within_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    m = random_model(7, seed=seed % 1000)
    m = unpack(scale * rng.normal(size=72), m)
    f = rng.normal(size=(50, 7)) * scale
    f[:, 0] = 1
    for k, spec in enumerate(m.params):
        p = map_param(f, k, m)
        assert np.all(p >= spec.p_min) and np.all(p <= spec.p_max)
        if spec.discrete == "odd":
            assert np.all(p % 2 == 1)
