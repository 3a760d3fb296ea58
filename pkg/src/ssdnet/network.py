"""Cross-modal encoder/decoder with per-block spherical align/separate round trips."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data.resample import resample_matrix
from .nn import BRANCH_GAIN, Conv2d, Module, RestormerBlock
from .sphere import SphereConfig, SphericalFeatureMap, exp_map, log_map
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    P: int = 4
    C: int = 64
    heads: int = 4
    expansion: float = 2.0
    residual_output: bool = True
    sphere: SphereConfig = field(default_factory=SphereConfig)
    decoder_blocks: int | None = None
    shared_encoder: bool = False
    sphere_roundtrip: bool = True

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.C < 2 or self.C % 2:
            raise ValueError(f"C must be even, got {self.C}")
        if self.C % self.heads or (3 * self.C // 2) % self.heads:
            raise ValueError(f"heads={self.heads} must divide both C={self.C} and 3C/2={3 * self.C // 2}")
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")

    @property
    def n_decoder_blocks(self) -> int:
        return self.decoder_blocks if self.decoder_blocks is not None else max(1, self.P // 2)


@dataclass
class EncoderOutput:
    phi: Tensor
    per_block: list[tuple[SphericalFeatureMap, SphericalFeatureMap]]
    pre_maps: list[Tensor] = field(default_factory=list, repr=False)


@dataclass
class ForwardResult:
    depth: Tensor
    rgb: Tensor
    enc_depth: EncoderOutput
    enc_rgb: EncoderOutput
    base: Tensor


def decompose_step(phi_prev: Tensor, block: RestormerBlock, cfg: ModelConfig):
    """One encoder step: block, channel split, EXP/LOG round trip per half, re-concat.

    Returns ``(phi_next, aligned, separated, pre)`` where ``pre`` is the block
    output before the round trip.
    """
    c = phi_prev.shape[-1]
    if c % 2:
        raise ShapeError(f"decompose_step needs an even channel count, got {c}")
    pre = block(phi_prev)
    if not cfg.sphere_roundtrip:
        return pre, None, None, pre
    half = c // 2
    aligned = exp_map(pre[..., :half], cfg.sphere)
    separated = exp_map(pre[..., half:], cfg.sphere)
    phi_next = T.concat([log_map(aligned, cfg.sphere), log_map(separated, cfg.sphere)], -1)
    return phi_next, aligned, separated, pre


class Encoder(Module):
    def __init__(self, c_in: int, cfg: ModelConfig, rng, blocks=None):
        self.c_in = c_in
        self.embed = Conv2d(c_in, cfg.C, "k3x3", rng)
        self.block = blocks if blocks is not None else [
            RestormerBlock(cfg.C, cfg.heads, cfg.expansion, rng) for _ in range(cfg.P)]

    def embed_shallow(self, img: Tensor) -> Tensor:
        if img.shape[-1] != self.c_in:
            raise ShapeError(f"encoder expects {self.c_in} input channels, got {img.shape[-1]}")
        return self.embed(img)

    def forward(self, img: Tensor, cfg: ModelConfig) -> EncoderOutput:
        phi = self.embed_shallow(img)
        per_block, pre_maps = [], []
        for blk in self.block:
            phi, aligned, separated, pre = decompose_step(phi, blk, cfg)
            pre_maps.append(pre)
            if aligned is not None:
                per_block.append((aligned, separated))
        return EncoderOutput(phi, per_block, pre_maps)


class Decoder(Module):
    def __init__(self, c_in: int, n_blocks: int, c_out: int, cfg: ModelConfig, rng, zero_final: bool):
        self.block = [RestormerBlock(c_in, cfg.heads, cfg.expansion, rng) for _ in range(n_blocks)]
        self.out = Conv2d(c_in, c_out, "k3x3", rng, zero_init=zero_final, gain=BRANCH_GAIN)

    def forward(self, x):
        for blk in self.block:
            x = blk(x)
        return self.out(x)


class SSDNet(Module):
    """Depth/RGB encoders and decoders. Parameter names look like
    ``encoder_depth/block2/attn/qkv/kernel``."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        self.dtype = T.default_dtype()
        rng = np.random.default_rng(seed)
        self.encoder_depth = Encoder(1, cfg, rng)
        shared = self.encoder_depth.block if cfg.shared_encoder else None
        self.encoder_rgb = Encoder(3, cfg, rng, blocks=shared)
        self.decoder_depth = Decoder(cfg.C + cfg.C // 2, cfg.n_decoder_blocks, 1, cfg, rng, zero_final=True)
        self.decoder_rgb = Decoder(cfg.C, cfg.n_decoder_blocks, 3, cfg, rng, zero_final=False)
        self.assign_names()

    def _input(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor._wrap(np.asarray(x, dtype=self.dtype))

    def encode(self, img, which: str) -> EncoderOutput:
        img = self._input(img)
        if which == "depth":
            if img.ndim == 2 or (img.ndim == 3 and img.shape[-1] != 1):
                img = T.reshape(img, img.shape + (1,))
            return self.encoder_depth(img, self.cfg)
        if which == "rgb":
            return self.encoder_rgb(img, self.cfg)
        raise ValueError(f"unknown modality {which!r}")

    def decode(self, phi_d: Tensor, phi_r: Tensor, base=None) -> tuple[Tensor, Tensor]:
        c = self.cfg.C
        if phi_d.shape[-1] != c or phi_r.shape[-1] != c:
            raise ShapeError(f"decoder expects {c} channels, got {phi_d.shape[-1]} and {phi_r.shape[-1]}")
        depth = self.decoder_depth(T.concat([phi_d, phi_r[..., :c // 2]], -1))
        if self.cfg.residual_output and base is not None:
            depth = depth + self._input(base)
        return depth, self.decoder_rgb(phi_r)

    def upsample(self, lr, size: tuple[int, int]) -> Tensor:
        """Bicubic upsampling of ``(B, h, w, 1)`` or ``(h, w)`` LR depth as a linear tensor op."""
        lr = self._input(lr)
        if lr.ndim == 2:
            lr = T.reshape(lr, lr.shape + (1,))
        h, w = lr.shape[-3], lr.shape[-2]
        return T.resample2d(lr, resample_matrix(h, size[0]), resample_matrix(w, size[1]))

    def forward(self, lr, rgb) -> ForwardResult:
        """``lr``: (B, h, w, 1) normalized depth; ``rgb``: (B, H, W, 3)."""
        rgb = self._input(rgb)
        base = self.upsample(lr, rgb.shape[-3:-1])
        enc_d = self.encode(base, "depth")
        enc_r = self.encode(rgb, "rgb")
        depth, rgb_hat = self.decode(enc_d.phi, enc_r.phi, base)
        return ForwardResult(depth, rgb_hat, enc_d, enc_r, base)

    def super_resolve(self, lr_depth: np.ndarray, rgb: np.ndarray, scale: int) -> np.ndarray:
        """HR depth (H, W) from LR depth (h, w) and RGB (H, W, 3), all normalized."""
        lr_depth = np.asarray(lr_depth)
        rgb = np.asarray(rgb)
        h, w = lr_depth.shape
        if rgb.shape != (h * scale, w * scale, 3):
            raise ShapeError(f"rgb {rgb.shape} does not match LR {lr_depth.shape} at scale {scale}")
        with T.no_grad():
            out = self.forward(lr_depth[None, ..., None], rgb[None])
        return out.depth.data[0, ..., 0].astype(np.float64)


def embed_shallow(img, encoder: Encoder) -> Tensor:
    return encoder.embed_shallow(T.as_tensor(img))


def encode(img, which: str, model: SSDNet) -> EncoderOutput:
    return model.encode(img, which)


def decode(phi_d, phi_r, model: SSDNet, base=None):
    return model.decode(phi_d, phi_r, base)


def super_resolve(lr_depth, rgb, model: SSDNet, scale: int) -> np.ndarray:
    return model.super_resolve(lr_depth, rgb, scale)
