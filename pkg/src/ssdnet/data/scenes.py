"""Synthetic piecewise-constant RGB-D scenes.

Depth is a constant background with rectangles and discs at random constant
depths. The RGB image shares the geometry (one well-separated base colour per
region) and adds a per-region sinusoidal texture plus mild noise, so colour
edges coincide with depth discontinuities while texture stays RGB-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pnm import DepthMap, RgbImage
from .resample import bicubic_resample

SCALES = (4, 8, 16)
DEPTH_RANGE_M = 10.0
TEXTURE_AMPLITUDE = 0.04
NOISE_SIGMA = 0.008
RGB_EDGE_THRESHOLD = 0.12
MIN_CANVAS = 8
# colour grid with Chebyshev spacing 0.4 keeps region boundaries visible through texture
_PALETTE = np.array([(r, g, b) for r in (0.1, 0.5, 0.9) for g in (0.1, 0.5, 0.9) for b in (0.1, 0.5, 0.9)])


@dataclass
class ScenePair:
    rgb: RgbImage
    depth_hr: DepthMap
    depth_lr: DepthMap
    scale: int
    id: str
    labels: np.ndarray | None = field(default=None, repr=False)


def downsample_depth(depth: DepthMap, scale: int) -> DepthMap:
    h, w = depth.shape
    if h % scale or w % scale:
        raise ValueError(f"depth {h}x{w} not divisible by scale {scale}")
    lr = np.clip(bicubic_resample(depth.values, h // scale, w // scale), 0.0, 1.0)
    return DepthMap(lr, depth.scale, depth.unit)


def make_pair(rgb: RgbImage, depth: DepthMap, scale: int, scene_id: str, labels=None) -> ScenePair:
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    if rgb.shape[:2] != depth.shape:
        raise ValueError(f"rgb {rgb.shape[:2]} and depth {depth.shape} sizes differ")
    return ScenePair(rgb, depth, downsample_depth(depth, scale), scale, scene_id, labels)


def _shape_mask(rng, h, w):
    yy, xx = np.mgrid[:h, :w]
    if rng.random() < 0.5:
        rh = rng.integers(max(2, h // 8), max(3, h // 2) + 1)
        rw = rng.integers(max(2, w // 8), max(3, w // 2) + 1)
        y0 = rng.integers(0, h - rh + 1)
        x0 = rng.integers(0, w - rw + 1)
        return (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
    rad = rng.uniform(max(1.5, min(h, w) / 16), max(2.0, min(h, w) / 4))
    cy = rng.uniform(rad, h - rad)
    cx = rng.uniform(rad, w - rad)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad


def synth_scene(h: int, w: int, n_shapes: int, seed: int, scale: int = 4,
                scene_id: str | None = None) -> ScenePair:
    if n_shapes < 1:
        raise ValueError("n_shapes must be >= 1")
    if h < MIN_CANVAS or w < MIN_CANVAS:
        raise ValueError(f"canvas {h}x{w} too small for shapes (minimum {MIN_CANVAS})")
    if n_shapes + 1 > len(_PALETTE):
        raise ValueError(f"at most {len(_PALETTE) - 1} shapes supported")
    rng = np.random.default_rng(seed)
    labels = np.zeros((h, w), dtype=np.int32)
    for i in range(1, n_shapes + 1):
        labels[_shape_mask(rng, h, w)] = i

    depths = np.concatenate([[rng.uniform(0.6, 0.95)], rng.uniform(0.1, 0.9, n_shapes)])
    depth = DepthMap(depths[labels], DEPTH_RANGE_M / 65535, "m").quantized()

    colours = _PALETTE[rng.choice(len(_PALETTE), n_shapes + 1, replace=False)]
    colours = colours + rng.uniform(-0.03, 0.03, colours.shape)
    yy, xx = np.mgrid[:h, :w]
    rgb = colours[labels]
    for i in range(n_shapes + 1):
        fy, fx = rng.uniform(-0.08, 0.08, 2)
        phase = rng.uniform(0, 2 * np.pi, 3)
        wave = np.sin(2 * np.pi * (fy * yy + fx * xx)[..., None] + phase)
        rgb = np.where((labels == i)[..., None], rgb + TEXTURE_AMPLITUDE * wave, rgb)
    rgb = rgb + rng.normal(0, NOISE_SIGMA, rgb.shape)
    rgb = RgbImage.from_counts(RgbImage(np.clip(rgb, 0, 1)).counts())
    return make_pair(rgb, depth, scale, scene_id or f"scene{seed:05d}", labels)


def edge_map(img: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Pixels whose value differs from a 4-neighbour by more than ``threshold``
    (max over channels)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    edges = np.zeros(img.shape[:2], dtype=bool)
    dy = np.abs(np.diff(img, axis=0)).max(axis=-1) > threshold
    dx = np.abs(np.diff(img, axis=1)).max(axis=-1) > threshold
    edges[:-1] |= dy
    edges[1:] |= dy
    edges[:, :-1] |= dx
    edges[:, 1:] |= dx
    return edges


def edge_overlap_ratio(depth: np.ndarray, rgb: np.ndarray, threshold: float = RGB_EDGE_THRESHOLD) -> float:
    """Fraction of depth-edge pixels lying within 1 px of an RGB edge."""
    d_edges = edge_map(depth)
    if not d_edges.any():
        return 1.0
    r_edges = edge_map(rgb, threshold)
    grown = r_edges.copy()
    grown[1:] |= r_edges[:-1]
    grown[:-1] |= r_edges[1:]
    grown[:, 1:] |= grown[:, :-1].copy()
    grown[:, :-1] |= grown[:, 1:].copy()
    return float((d_edges & grown).sum() / d_edges.sum())
