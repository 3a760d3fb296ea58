import numpy as np
import pytest

from ssdnet import tensor as T
from ssdnet.data import bicubic_resample
from ssdnet.losses import decomposition_loss, pixel_loss, total_loss
from ssdnet.network import ModelConfig, SSDNet, decompose_step, embed_shallow, encode, super_resolve
from ssdnet.nn import ChannelAttention, GatedFFN, RestormerBlock, channel_attention, gated_ffn
from ssdnet.sphere import SphereConfig, norm_deviation
from ssdnet.tensor import Parameter, ShapeError, Tensor

TOY = ModelConfig(P=2, C=8, heads=2)


def _perturb(model, rng, sigma=0.05):
    for p in model.parameters():
        p.data = p.data + rng.normal(0, sigma, p.shape).astype(p.dtype)


class TestModelConfig:
    def test_odd_channels(self):
        with pytest.raises(ValueError):
            ModelConfig(C=7)

    def test_heads_divide(self):
        with pytest.raises(ValueError):
            ModelConfig(C=8, heads=3)

    def test_decoder_blocks_default(self):
        assert ModelConfig(P=4).n_decoder_blocks == 2
        assert ModelConfig(P=1).n_decoder_blocks == 1


class TestAttention:
    def test_single_channel_single_head(self, f64, rng):
        attn = ChannelAttention(1, 1, rng)
        x = Tensor(rng.normal(size=(1, 3, 3, 1)))
        out, w = channel_attention(x, attn, 1, attn.temperature, return_weights=True)
        np.testing.assert_allclose(w.data, 1.0)
        v = attn.qkv_dw(attn.qkv(x))[..., 2:3]
        np.testing.assert_allclose(out.data, attn.project_out(v).data, atol=1e-12)

    def test_rows_sum_to_one(self, f64, rng):
        attn = ChannelAttention(8, 2, rng)
        _, w = channel_attention(rng.normal(size=(2, 4, 4, 8)), attn, 2, attn.temperature, return_weights=True)
        assert w.shape == (2, 2, 4, 4)
        np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)

    def test_heads_must_divide(self, rng):
        with pytest.raises(ShapeError):
            ChannelAttention(6, 4, rng)

    def test_gradient(self, f64, rng):
        attn = ChannelAttention(4, 2, rng).assign_names()
        x = Parameter(rng.normal(size=(1, 3, 3, 4)), name="x")
        w = rng.normal(size=(1, 3, 3, 4))
        report = T.gradient_check(lambda: T.sum(attn(x) * w), [x] + attn.parameters())
        assert report.max_error <= 1e-4


class TestGatedFFN:
    def test_zero_input_zero_output(self, f64, rng):
        ffn = GatedFFN(4, 2.0, rng)
        np.testing.assert_array_equal(gated_ffn(np.zeros((3, 3, 4)), ffn).data, 0)

    def test_shape(self, rng):
        assert GatedFFN(6, 2.0, rng)(rng.normal(size=(2, 5, 4, 6))).shape == (2, 5, 4, 6)

    def test_gradient(self, f64, rng):
        ffn = GatedFFN(4, 2.0, rng).assign_names()
        x = Parameter(rng.normal(size=(1, 3, 3, 4)), name="x")
        report = T.gradient_check(lambda: T.sum(T.square(ffn(x))), [x] + ffn.parameters())
        assert report.max_error <= 1e-4


class TestEmbedAndDecompose:
    def test_zero_image_zero_features(self, f64):
        model = SSDNet(TOY)
        out = embed_shallow(np.zeros((1, 4, 4, 1)), model.encoder_depth)
        np.testing.assert_array_equal(out.data, 0)
        assert out.shape[-1] == TOY.C

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            embed_shallow(np.zeros((4, 4, 2)), SSDNet(TOY).encoder_depth)

    def test_embed_gradient(self, f64, rng):
        model = SSDNet(TOY)
        img = rng.uniform(size=(1, 4, 4, 3))
        params = model.encoder_rgb.embed.parameters()
        report = T.gradient_check(lambda: T.sum(T.square(embed_shallow(img, model.encoder_rgb))), params)
        assert report.max_error <= 1e-4

    def test_round_trip_identity(self, f64, rng):
        blk = RestormerBlock(8, 2, 2.0, rng)
        x = Tensor(rng.normal(size=(1, 4, 4, 8)))
        nxt, aligned, separated, pre = decompose_step(x, blk, TOY)
        np.testing.assert_allclose(nxt.data, pre.data, atol=1e-6)
        for half in (aligned, separated):
            assert half.shape == (1, 4, 4, 5)
            assert np.max(np.abs(norm_deviation(half))) <= 1e-6

    def test_channel_split_partition(self, f64, rng):
        blk = RestormerBlock(8, 2, 2.0, rng)
        x = Tensor(rng.normal(size=(1, 3, 3, 8)))
        _, aligned, separated, pre = decompose_step(x, blk, TOY)
        from ssdnet.sphere import log_map
        np.testing.assert_allclose(log_map(aligned).data, pre.data[..., :4], atol=1e-9)
        np.testing.assert_allclose(log_map(separated).data, pre.data[..., 4:], atol=1e-9)

    def test_verbatim_deviates(self, f64, rng):
        cfg = ModelConfig(P=2, C=8, heads=2, sphere=SphereConfig(variant="verbatim"))
        blk = RestormerBlock(8, 2, 2.0, rng)
        nxt, _, _, pre = decompose_step(Tensor(rng.normal(size=(1, 3, 3, 8))), blk, cfg)
        assert np.max(np.abs(nxt.data - pre.data)) > 1e-3

    def test_odd_channels(self, rng):
        with pytest.raises(ShapeError):
            decompose_step(Tensor(np.zeros((2, 2, 3))), RestormerBlock(3, 1, 2.0, rng), TOY)


class TestSSDNet:
    def test_parameter_names_unique(self):
        names = [n for n, _ in SSDNet(TOY).named_parameters()]
        assert len(names) == len(set(names))
        assert "encoder_depth/block2/attn/qkv/kernel" in names

    def test_private_encoders(self):
        model = SSDNet(TOY)
        d = {id(p) for p in model.encoder_depth.parameters()}
        r = {id(p) for p in model.encoder_rgb.parameters()}
        assert not d & r

    def test_shared_encoder_ablation(self):
        model = SSDNet(ModelConfig(P=2, C=8, heads=2, shared_encoder=True))
        assert model.encoder_depth.block is model.encoder_rgb.block

    def test_encode_structure_and_determinism(self, f64, rng):
        model = SSDNet(TOY)
        img = rng.uniform(size=(1, 8, 8, 3))
        a, b = encode(img, "rgb", model), encode(img, "rgb", model)
        assert len(a.per_block) == TOY.P
        assert np.array_equal(a.phi.data, b.phi.data)
        with pytest.raises(ValueError):
            encode(img, "infrared", model)

    def test_decode_shapes(self, f64, rng):
        model = SSDNet(TOY)
        phi = Tensor(rng.normal(size=(1, 8, 8, 8)))
        d, r = model.decode(phi, phi)
        assert d.shape == (1, 8, 8, 1) and r.shape == (1, 8, 8, 3)
        with pytest.raises(ShapeError):
            model.decode(Tensor(np.zeros((1, 8, 8, 6))), phi)

    def test_untrained_equals_bicubic(self, rng):
        model = SSDNet(TOY)
        lr = rng.uniform(size=(4, 4))
        out = super_resolve(lr, rng.uniform(size=(16, 16, 3)), model, 4)
        np.testing.assert_allclose(out, bicubic_resample(lr, 16, 16), atol=1e-6)

    def test_super_resolve_shape_errors(self, rng):
        with pytest.raises(ShapeError):
            SSDNet(TOY).super_resolve(np.zeros((4, 4)), np.zeros((12, 16, 3)), 4)

    def test_super_resolve_deterministic(self, rng):
        model = SSDNet(TOY)
        _perturb(model, rng)
        lr, rgb = rng.uniform(size=(4, 4)), rng.uniform(size=(16, 16, 3))
        assert np.array_equal(model.super_resolve(lr, rgb, 4), model.super_resolve(lr, rgb, 4))

    def test_depth_loss_reaches_rgb_encoder(self, f64, rng):
        model = SSDNet(TOY)
        _perturb(model, rng)
        out = model.forward(rng.uniform(size=(1, 2, 2, 1)), rng.uniform(size=(1, 8, 8, 3)))
        T.backward(pixel_loss(out.depth, rng.uniform(size=(1, 8, 8, 1))))
        assert np.any(model.encoder_rgb.embed.kernel.grad != 0)
        assert all(p.grad is None for p in model.decoder_rgb.parameters())

    def test_every_parameter_receives_gradient(self, f64, rng):
        model = SSDNet(TOY)
        _perturb(model, rng)  # lift the zero-initialized head so upstream paths are live
        lr, rgb = rng.uniform(size=(2, 2, 2, 1)), rng.uniform(size=(2, 8, 8, 3))
        out = model.forward(lr, rgb)
        dec = decomposition_loss(out.enc_depth.per_block, out.enc_rgb.per_block)[0]
        loss = total_loss(pixel_loss(out.depth, rng.uniform(size=(2, 8, 8, 1))), pixel_loss(out.rgb, rgb), dec)
        T.backward(loss.tensor)
        dead = [n for n, p in model.named_parameters() if p.grad is None or not np.any(p.grad)]
        assert not dead

    def test_zero_head_only_trains_head_first(self, f64, rng):
        model = SSDNet(TOY)
        out = model.forward(rng.uniform(size=(1, 2, 2, 1)), rng.uniform(size=(1, 8, 8, 3)))
        T.backward(pixel_loss(out.depth, rng.uniform(size=(1, 8, 8, 1))))
        assert np.any(model.decoder_depth.out.kernel.grad != 0)

    def test_full_model_gradient(self, f64, rng):
        model = SSDNet(TOY)
        _perturb(model, rng)
        lr, rgb, gt = rng.uniform(size=(1, 4, 4, 1)), rng.uniform(size=(1, 16, 16, 3)), rng.uniform(size=(1, 16, 16, 1))

        def f():
            out = model.forward(lr, rgb)
            dec = decomposition_loss(out.enc_depth.per_block, out.enc_rgb.per_block)[0]
            return total_loss(pixel_loss(out.depth, gt), pixel_loss(out.rgb, rgb), dec).tensor
        report = T.gradient_check(f, model.parameters(), max_entries=2)
        assert report.max_error <= 1e-3

    def test_state_dict_round_trip(self, rng):
        a, b = SSDNet(TOY, seed=1), SSDNet(TOY, seed=2)
        b.load_state_dict(a.state_dict())
        lr, rgb = rng.uniform(size=(4, 4)), rng.uniform(size=(16, 16, 3))
        _perturb(a, rng)
        b.load_state_dict(a.state_dict())
        assert np.array_equal(a.super_resolve(lr, rgb, 4), b.super_resolve(lr, rgb, 4))
        with pytest.raises(KeyError):
            b.load_state_dict({"bogus": np.zeros(1)})


class TestForwardTransparency:
    def test_maps_active_vs_bypassed(self, f64, rng):
        on = SSDNet(TOY, seed=3)
        off = SSDNet(ModelConfig(P=2, C=8, heads=2, sphere_roundtrip=False), seed=3)
        _perturb(on, rng)
        off.load_state_dict(on.state_dict())
        lr, rgb = rng.uniform(size=(1, 4, 4, 1)), rng.uniform(size=(1, 16, 16, 3))
        with T.no_grad():
            a, b = on.forward(lr, rgb), off.forward(lr, rgb)
        np.testing.assert_allclose(a.depth.data, b.depth.data, atol=1e-6)
        np.testing.assert_allclose(a.rgb.data, b.rgb.data, atol=1e-6)
