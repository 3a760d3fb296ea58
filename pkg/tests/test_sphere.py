import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdnet import tensor as T
from ssdnet.sphere import (SphereConfig, SphericalFeatureMap, cosine_distance_raw, cut_locus_scale, exp_map,
                           l2_distance, log_map, norm_deviation, pixel_sphere_distance, sphere_distance,
                           spherical_feature_distance)
from ssdnet.tensor import NumericError, Parameter, ShapeError, Tensor

# worked-example vectors
F1 = np.array([0.4, 0.5, 0.6])
F2 = np.array([4.0, 5.0, 6.0])
F3 = np.array([0.6, 0.5, 0.4])


def _ball(rng, n, d, radius, frac=0.99):
    """Uniform directions with norms up to ``frac * pi * radius``."""
    v = rng.normal(size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0, frac * np.pi * radius, (n, 1))


class TestSphereConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SphereConfig(radius=0)
        with pytest.raises(ValueError):
            SphereConfig(variant="other")
        with pytest.raises(ValueError):
            SphereConfig(reduction="max")


class TestExpMap:
    def test_zero_vector_is_north_pole(self, f64):
        np.testing.assert_allclose(exp_map(np.zeros(2)).values.data, [0, 0, 1])

    def test_quarter_geodesic(self, f64):
        np.testing.assert_allclose(exp_map([np.pi / 2, 0.0]).values.data, [1, 0, 0], atol=1e-15)

    def test_radius_two(self, f64):
        out = exp_map([np.pi, 0.0], SphereConfig(radius=2.0)).values.data
        np.testing.assert_allclose(out, [2, 0, 0], atol=1e-14)

    def test_matches_closed_form(self, f64, rng):
        r = 1.7
        v = _ball(rng, 50, 4, r, 0.9)
        n = np.linalg.norm(v, axis=1, keepdims=True)
        expected = np.concatenate([v / n * r * np.sin(n / r), r * np.cos(n / r)], axis=1)
        got = exp_map(v[:, None, :], SphereConfig(radius=r)).values.data[:, 0]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_cut_locus_error_without_prescale(self, f64):
        cfg = SphereConfig(prescale=False)
        with pytest.raises(NumericError):
            exp_map([np.pi, 0.0], cfg)
        with T.strict(False):
            exp_map([np.pi, 0.0], cfg)

    def test_prescale_keeps_direction(self, f64):
        v = np.array([[[10.0, 0.0], [0.0, 1.0]]])
        x = exp_map(v)
        assert float(np.asarray(x.scale.data).ravel()[0]) == pytest.approx(0.99 * np.pi / 10)
        back = log_map(x).data
        np.testing.assert_allclose(back, v, atol=1e-12)

    def test_prescale_identity_below_limit(self, f64, rng):
        v = _ball(rng, 20, 3, 1.0, 0.5)
        np.testing.assert_allclose(cut_locus_scale(Tensor(v), 1.0).data, 1.0)

    def test_prescale_per_map_in_batches(self, f64):
        v = np.zeros((2, 2, 2, 2))
        v[0, 0, 0, 0] = 20.0
        v[1, 0, 0, 0] = 1.0
        s = cut_locus_scale(Tensor(v), 1.0).data
        assert s.shape == (2, 1, 1, 1)
        assert s[0].item() < 1 and s[1].item() == 1


class TestLogMap:
    def test_inverse_quarter_geodesic(self, f64):
        np.testing.assert_allclose(log_map([1.0, 0.0, 0.0]).data, [np.pi / 2, 0], atol=1e-15)

    def test_north_pole(self, f64):
        np.testing.assert_array_equal(log_map([0.0, 0.0, 1.0]).data, [0, 0])

    def test_antipode_rejected(self, f64):
        with pytest.raises(NumericError):
            log_map([0.0, 0.0, -1.0])

    def test_off_sphere_rejected(self, f64):
        with pytest.raises(NumericError):
            log_map([0.5, 0.0, 0.5])

    def test_matches_arccos_formula(self, f64, rng):
        x = exp_map(_ball(rng, 40, 3, 1.0, 0.95)).values.data
        psi = np.arccos(np.clip(x[:, -1], -1, 1))
        u = (psi / np.sin(psi))[:, None] * x[:, :-1]
        np.testing.assert_allclose(log_map(x).data, u, atol=1e-10)


class TestRoundTrip:
    @pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
    def test_round_trip(self, f64, rng, r):
        v = _ball(rng, 2000, 5, r)
        cfg = SphereConfig(radius=r)
        x = exp_map(v, cfg)
        assert np.max(np.abs(log_map(x, cfg).data - v)) <= 1e-6
        assert np.max(np.abs(np.linalg.norm(x.values.data, axis=-1) - r) / r) <= 1e-6

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), r=st.floats(0.1, 5.0), d=st.integers(1, 8))
    def test_round_trip_property(self, seed, r, d):
        rng = np.random.default_rng(seed)
        with T.precision(np.float64):
            cfg = SphereConfig(radius=r)
            v = _ball(rng, 64, d, r)
            x = exp_map(v, cfg)
            assert np.max(np.abs(log_map(x, cfg).data - v)) <= 1e-6
            assert np.max(np.abs(norm_deviation(x)) / r) <= 1e-6

    def test_verbatim_is_off_sphere(self, f64, rng):
        x = exp_map(rng.normal(size=(10, 3)), SphereConfig(variant="verbatim"))
        assert np.max(np.abs(norm_deviation(x))) > 1e-3


class TestSphereDistance:
    def test_self_distance(self, f64, rng):
        a = exp_map(rng.normal(size=(3, 3, 4)))
        assert sphere_distance(a, a).item() == 0.0

    def test_orthogonal(self, f64):
        assert sphere_distance([[1.0, 0, 0]], [[0, 0, 1.0]]).item() == pytest.approx(1.0)

    def test_antipodal(self, f64):
        assert sphere_distance([[0, 0, 1.0]], [[0, 0, -1.0]]).item() == pytest.approx(2.0)

    def test_matches_inner_product_form(self, f64, rng):
        r = 1.3
        cfg = SphereConfig(radius=r)
        a = exp_map(rng.normal(size=(4, 4, 3)), cfg)
        b = exp_map(rng.normal(size=(4, 4, 3)), cfg)
        ref = 1 - np.sum(a.values.data * b.values.data, -1) / r ** 2
        np.testing.assert_allclose(pixel_sphere_distance(a, b, cfg).data, ref, atol=1e-12)

    def test_sum_reduction(self, f64, rng):
        a, b = exp_map(rng.normal(size=(2, 3, 3))), exp_map(rng.normal(size=(2, 3, 3)))
        mean = sphere_distance(a, b).item()
        total = sphere_distance(a, b, SphereConfig(reduction="sum")).item()
        assert total == pytest.approx(6 * mean)

    def test_shape_mismatch(self, f64):
        with pytest.raises(ShapeError):
            sphere_distance(exp_map(np.zeros((2, 2))), exp_map(np.zeros((3, 2))))

    def test_off_sphere_rejected(self, f64):
        with pytest.raises(NumericError):
            sphere_distance([[0.5, 0, 0]], [[0, 0, 1.0]])

    def test_verbatim_renormalizes(self, f64, rng):
        cfg = SphereConfig(variant="verbatim")
        a, b = exp_map(rng.normal(size=(3, 2)), cfg), exp_map(rng.normal(size=(3, 2)), cfg)
        assert 0 <= sphere_distance(a, b, cfg).item() <= 2

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        with T.precision(np.float64):
            a = rng.normal(0, 3, size=(3, 3, 4))
            b = rng.normal(0, 3, size=(3, 3, 4))
            ab = spherical_feature_distance(a, b).item()
            ba = spherical_feature_distance(b, a).item()
        assert ab == ba
        assert 0 <= ab <= 2

    def test_feature_distance_self(self, f64, rng):
        a = rng.normal(size=(3, 3, 4))
        assert spherical_feature_distance(a, a).item() == 0.0

    def test_feature_distance_gradient(self, f64, rng):
        a = Parameter(rng.normal(size=(3, 3, 4)), name="a")
        b = rng.normal(size=(3, 3, 4))
        report = T.gradient_check(lambda: spherical_feature_distance(a, b), [a])
        assert report.max_error <= 1e-4

    def test_spherical_map_shape(self, f64):
        x = SphericalFeatureMap(Tensor(np.zeros((2, 3, 4))), 1.0)
        assert x.shape == (2, 3, 4)


class TestRawDistances:
    def test_cosine_scale_invariant(self, f64):
        assert cosine_distance_raw(F1[None], F2[None]).item() <= 1e-6

    def test_cosine_f1_f3(self, f64):
        # 1 - 0.73 / 0.77
        assert cosine_distance_raw(F1[None], F3[None]).item() == pytest.approx(0.0519480519, abs=1e-9)

    def test_cosine_self(self, f64):
        assert cosine_distance_raw(F1[None], F1[None]).item() == pytest.approx(0.0, abs=1e-15)

    def test_cosine_zero_norm(self, f64):
        with pytest.raises(NumericError):
            cosine_distance_raw(np.zeros((1, 3)), F1[None])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), c=st.floats(1e-3, 1e3))
    def test_cosine_scale_property(self, seed, c):
        v = np.random.default_rng(seed).normal(size=(4, 5)) + 0.1
        with T.precision(np.float64):
            assert cosine_distance_raw(v, c * v).item() <= 1e-6

    def test_l2_values(self, f64):
        assert l2_distance(F1[None], F2[None]).item() == pytest.approx(7.8975, abs=1e-4)
        assert l2_distance(F1[None], F3[None]).item() == pytest.approx(0.28284, abs=1e-5)
