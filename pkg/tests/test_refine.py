import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from ssdnet import tensor as T
from ssdnet.losses import LossWeights
from ssdnet.data import synth_scene
from ssdnet.network import ModelConfig, SSDNet
from ssdnet.optim import Adam
from ssdnet.refine import (LUMA, DefectClassifier, DefectKind, DefectParams, DpcDataset, PatchTriplet, accuracy,
                           classify_patch, make_dpc_dataset, patch_features, sample_triplets, scr_step,
                           split_dataset, synthesize_defect, train_dpc)
from ssdnet.tensor import ShapeError

TOY = ModelConfig(P=2, C=8, heads=2)


class FixedClassifier:
    """Stands in for a trained classifier: labels every patch the same."""

    def __init__(self, m, label):
        self.m = m
        self.label = int(label)

    def predict(self, patches):
        return np.full(len(patches), self.label)


class TestDefects:
    def test_perfect_is_copy(self, rng):
        p = rng.uniform(size=(8, 8))
        out = synthesize_defect(p, DefectKind.PERFECT)
        assert np.array_equal(out, p) and out is not p

    def test_noisy_statistics(self, rng):
        p = np.full((128, 128), 0.5)
        out = synthesize_defect(p, DefectKind.NOISY, params=DefectParams(noise_sigma=0.05), seed=0)
        assert np.std(out - p) == pytest.approx(0.05, rel=0.05)
        assert out.min() >= 0 and out.max() <= 1

    def test_noisy_seeded(self, rng):
        p = rng.uniform(size=(6, 6))
        a = synthesize_defect(p, DefectKind.NOISY, seed=3)
        assert np.array_equal(a, synthesize_defect(p, DefectKind.NOISY, seed=3))

    def test_blurry_matches_gaussian(self, rng):
        p = rng.uniform(size=(16, 16))
        out = synthesize_defect(p, DefectKind.BLURRY)
        np.testing.assert_allclose(out, gaussian_filter(p, 2.0, mode="reflect", truncate=1.5))
        assert np.std(out) < np.std(p)

    def test_texture_blend(self, rng):
        p = rng.uniform(size=(4, 4))
        rgb = rng.uniform(size=(4, 4, 3))
        out = synthesize_defect(p, DefectKind.TEXTURE_OVER_TRANSFERRED, rgb, DefectParams(texture_beta=0.5))
        np.testing.assert_allclose(out, np.clip(0.5 * p + 0.5 * rgb @ LUMA, 0, 1))

    def test_texture_needs_rgb(self, rng):
        with pytest.raises(ValueError):
            synthesize_defect(np.zeros((4, 4)), DefectKind.TEXTURE_OVER_TRANSFERRED)
        with pytest.raises(ShapeError):
            synthesize_defect(np.zeros((4, 4)), DefectKind.TEXTURE_OVER_TRANSFERRED, np.zeros((4, 5, 3)))

    def test_zero_noise_identity(self, rng):
        p = rng.uniform(size=(8, 8))
        np.testing.assert_array_equal(synthesize_defect(p, DefectKind.NOISY, params=DefectParams(0.0)), p)

    def test_blur_constant(self):
        np.testing.assert_allclose(synthesize_defect(np.full((9, 9), 0.4), DefectKind.BLURRY), 0.4, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), kind=st.sampled_from(list(DefectKind)), m=st.integers(4, 20))
    def test_shape_and_range(self, seed, kind, m):
        rng = np.random.default_rng(seed)
        p, rgb = rng.uniform(size=(m, m)), rng.uniform(size=(m, m, 3))
        out = synthesize_defect(p, kind, rgb, seed=seed)
        assert out.shape == (m, m) and out.min() >= 0 and out.max() <= 1

    @pytest.mark.parametrize("kw", [{"noise_sigma": -1}, {"blur_kernel": 4}, {"blur_kernel": 1},
                                    {"texture_beta": 1.5}])
    def test_params_validation(self, kw):
        with pytest.raises(ValueError):
            DefectParams(**kw)


class TestDataset:
    def test_balanced(self, scenes):
        data = make_dpc_dataset(scenes, m=32, count=40, seed=1)
        assert data.patches.shape == (40, 32, 32)
        assert np.bincount(data.labels).tolist() == [10] * 4

    def test_perfect_patches_are_sources(self, scenes):
        data = make_dpc_dataset(scenes, m=16, count=20, seed=2)
        perfect = data.labels == DefectKind.PERFECT
        np.testing.assert_array_equal(data.patches[perfect], data.sources[perfect])

    def test_deterministic(self, scenes):
        a = make_dpc_dataset(scenes, m=16, count=8, seed=5)
        b = make_dpc_dataset(scenes, m=16, count=8, seed=5)
        assert np.array_equal(a.patches, b.patches)

    def test_errors(self, scenes):
        with pytest.raises(ValueError):
            make_dpc_dataset(scenes, count=10)
        with pytest.raises(ValueError):
            make_dpc_dataset([], count=8)
        with pytest.raises(ValueError):
            make_dpc_dataset(scenes, m=128, count=8)

    def test_split(self, scenes):
        data = make_dpc_dataset(scenes, m=16, count=20, seed=0)
        train, test = split_dataset(data, seed=0)
        assert len(train) == 16 and len(test) == 4


class TestClassifier:
    def test_features(self, rng):
        f = patch_features(rng.uniform(size=(3, 8, 8)))
        assert f.shape == (3, 8, 8, 2)
        np.testing.assert_allclose(f[..., 0].mean(axis=(1, 2)), 0, atol=1e-12)
        np.testing.assert_array_equal(patch_features(np.full((1, 8, 8), 0.3)), 0)

    def test_shapes(self, rng):
        model = DefectClassifier(m=32)
        assert model(rng.uniform(size=(5, 32, 32))).shape == (5, 4)
        assert all(p.name.startswith("dpc/") for p in model.parameters())

    def test_patch_size(self):
        with pytest.raises(ValueError):
            DefectClassifier(m=20)
        with pytest.raises(ShapeError):
            classify_patch(DefectClassifier(m=16), np.zeros((32, 32)))

    def test_constant_patch_is_perfect(self):
        assert classify_patch(DefectClassifier(m=16), np.full((16, 16), 0.7)) == DefectKind.PERFECT

    def test_classify_returns_kind(self, rng):
        assert isinstance(classify_patch(DefectClassifier(m=16), rng.uniform(size=(16, 16))), DefectKind)

    def test_gradient(self, f64, rng):
        model = DefectClassifier(m=16, widths=(2, 2, 2, 2))
        x = rng.uniform(size=(2, 16, 16))
        report = T.gradient_check(lambda: T.cross_entropy(model(x), np.array([0, 3])), model.parameters(),
                                  max_entries=4)
        assert report.max_error <= 1e-4

    def test_learns_small_set(self, scenes):
        data = make_dpc_dataset(scenes, m=32, params=DefectParams(0.1, 7, 2.0, 0.5), count=80, seed=0)
        model, acc = train_dpc(data, epochs=10, seed=0)
        assert acc >= 0.75
        assert accuracy(model, data) >= 0.75

    def test_single_class(self, scenes):
        data = make_dpc_dataset(scenes, m=16, count=16, seed=0)
        one = DpcDataset(data.patches, np.zeros_like(data.labels), data.sources)
        _, acc = train_dpc(one, epochs=3, seed=0)
        assert acc == 1.0

    def test_logit_shift_invariance(self, rng):
        model = DefectClassifier(m=16)
        x = rng.uniform(size=(6, 16, 16))
        base = model.predict(x)
        model.head_bias.data = model.head_bias.data + 5.0
        assert np.array_equal(model.predict(x), base)

    def test_empty(self):
        with pytest.raises(ValueError):
            train_dpc(DpcDataset(np.zeros((0, 16, 16)), np.zeros(0, int), np.zeros((0, 16, 16))))


@pytest.fixture(scope="module")
def trained_dpc():
    scenes = [synth_scene(96, 96, 6, seed=900 + i) for i in range(40)]
    data = make_dpc_dataset(scenes, m=32, params=DefectParams(noise_sigma=0.1, texture_beta=0.5), count=800)
    train, test = split_dataset(data)
    model, acc = train_dpc(data, seed=0)
    return model, test


class TestTrainedClassifier:
    def test_held_out_covers_all_classes(self, trained_dpc):
        model, test = trained_dpc
        assert set(model.predict(test.patches).tolist()) == {0, 1, 2, 3}

    def test_heavy_noise(self, trained_dpc):
        model, test = trained_dpc
        src = test.sources[np.argmax(np.ptp(test.sources, axis=(1, 2)))]
        noisy = synthesize_defect(src, DefectKind.NOISY, params=DefectParams(noise_sigma=0.3), seed=0)
        assert classify_patch(model, noisy) == DefectKind.NOISY

    def test_blurred_edge(self, trained_dpc):
        model, _ = trained_dpc
        edge = np.full((32, 32), 0.2)
        edge[:, 16:] = 0.8
        blurred = synthesize_defect(edge, DefectKind.BLURRY, params=DefectParams(blur_kernel=9, blur_sigma=3.0))
        assert classify_patch(model, blurred) == DefectKind.BLURRY

    def test_perfect_prediction_gives_no_triplets(self, trained_dpc):
        model, _ = trained_dpc
        s = synth_scene(96, 96, 6, seed=990)
        gt = s.depth_hr.values
        assert sample_triplets(gt, gt, s.rgb.values, model, k=4, seed=0) == []


class TestSampling:
    def test_seeded(self, scenes):
        s = scenes[3]
        clf = FixedClassifier(16, DefectKind.NOISY)
        a = sample_triplets(s.depth_hr.values, s.depth_hr.values, s.rgb.values, clf, m=16, k=2, seed=9)
        b = sample_triplets(s.depth_hr.values, s.depth_hr.values, s.rgb.values, clf, m=16, k=2, seed=9)
        assert [t.location for t in a] == [t.location for t in b]
        assert all(np.array_equal(x.negatives, y.negatives) for x, y in zip(a, b))

    def test_triplet_structure(self, scenes):
        s = scenes[0]
        pred = np.clip(s.depth_hr.values + 0.01, 0, 1)
        out = sample_triplets(pred, s.depth_hr.values, s.rgb.values, FixedClassifier(16, DefectKind.BLURRY),
                              m=16, n_neg=5, k=3, seed=0)
        assert len(out) == 3
        for t in out:
            y, x = t.location
            np.testing.assert_array_equal(t.anchor, pred[y:y + 16, x:x + 16])
            np.testing.assert_array_equal(t.positive, s.depth_hr.values[y:y + 16, x:x + 16])
            assert t.negatives.shape == (5, 16, 16)
            assert t.label == DefectKind.BLURRY
            assert all(loc != t.location for loc in t.negative_locations)

    def test_negatives_carry_defect(self, scenes):
        s = scenes[1]
        gt = s.depth_hr.values
        t = sample_triplets(gt, gt, s.rgb.values, FixedClassifier(16, DefectKind.BLURRY), m=16, n_neg=2, seed=4)[0]
        blurred = synthesize_defect(gt, DefectKind.BLURRY)
        for (ny, nx), neg in zip(t.negative_locations, t.negatives):
            np.testing.assert_allclose(neg, blurred[ny:ny + 16, nx:nx + 16])

    def test_perfect_anchors_skipped(self, scenes):
        s = scenes[0]
        gt = s.depth_hr.values
        assert sample_triplets(gt, gt, s.rgb.values, FixedClassifier(16, DefectKind.PERFECT), m=16, k=4) == []

    def test_errors(self, scenes):
        s = scenes[0]
        gt = s.depth_hr.values
        clf = FixedClassifier(16, DefectKind.NOISY)
        with pytest.raises(ValueError):
            sample_triplets(gt[:8, :8], gt[:8, :8], s.rgb.values[:8, :8], clf, m=16)
        with pytest.raises(ValueError):
            sample_triplets(gt[:16, :16], gt[:16, :16], s.rgb.values[:16, :16], clf, m=16)
        with pytest.raises(ValueError):
            sample_triplets(gt, gt, s.rgb.values, clf, m=16, k=0)


def _triplets(scenes, m=16, label=DefectKind.NOISY, same=False):
    s = scenes[2]
    gt = s.depth_hr.values
    pred = gt if same else synthesize_defect(gt, DefectKind.BLURRY)
    return sample_triplets(pred, gt, s.rgb.values, FixedClassifier(m, label), m=m, n_neg=4, k=2, seed=1)


class TestScrStep:
    def test_empty_noop(self):
        model = SSDNet(TOY)
        before = model.state_dict()
        report = scr_step(model, [], Adam(model.parameters(), 1e-4))
        assert report.total == 0
        assert all(np.array_equal(v, model.state_dict()[k]) for k, v in before.items())

    def test_zero_loss_leaves_parameters(self, scenes):
        model = SSDNet(TOY)
        before = {k: v.copy() for k, v in model.state_dict().items()}
        report = scr_step(model, _triplets(scenes, same=True), Adam(model.parameters(), 1e-4))
        assert report.scr == 0.0
        for k, v in model.state_dict().items():
            assert np.array_equal(v, before[k]), k

    def test_only_depth_encoder_moves(self, scenes):
        model = SSDNet(TOY)
        before = {k: v.copy() for k, v in model.state_dict().items()}
        report = scr_step(model, _triplets(scenes), Adam(model.parameters(), 1e-3), LossWeights())
        assert report.scr > 0
        moved = {k for k, v in model.state_dict().items() if not np.array_equal(v, before[k])}
        assert moved and all(k.startswith("encoder_depth/") for k in moved)

    def test_triplet_dataclass(self):
        t = PatchTriplet(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((1, 2, 2)), DefectKind.NOISY, (0, 0))
        assert t.negative_locations == []
