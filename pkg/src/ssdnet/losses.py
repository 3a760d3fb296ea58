"""Training losses: pixel reconstruction, feature decomposition, contrastive refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .sphere import SphereConfig, SphericalFeatureMap, _renormalize, exp_map, pixel_sphere_distance
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

DEC_MODES = ("consistent", "verbatim")
DISTANCES = ("sphere", "l2")
SCR_FLOOR = 1e-8


@dataclass
class LossWeights:
    alpha1: float = 1e-2
    alpha2: float = 1e-3
    alpha3: float = 1e-2

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    pixel_depth: float = 0.0
    pixel_rgb: float = 0.0
    dec_align: float = 0.0
    dec_sepn: float = 0.0
    dec: float = 0.0
    scr: float = 0.0
    total: float = 0.0
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    CSV_FIELDS = ("pixel_depth", "pixel_rgb", "dec_align", "dec_sepn", "dec", "scr", "total")

    def row(self) -> list[float]:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def pixel_loss(pred, target, mode: str = "sum") -> Tensor:
    """Squared L2 norm of the difference per image, averaged over the batch.

    Rank-4 inputs are batches ``(B, H, W, c)``; anything else is one image.
    ``mode="mean"`` averages over every pixel instead.
    """
    pred, target = T.as_tensor(pred), T.as_tensor(target, like=T.as_tensor(pred))
    if pred.shape != target.shape:
        raise ShapeError(f"pixel_loss: shape mismatch {pred.shape} vs {target.shape}")
    sq = T.square(pred - target)
    if mode == "mean":
        return T.mean(sq)
    batch = pred.shape[0] if pred.ndim == 4 else 1
    return T.sum(sq) * (1.0 / batch)


def _block_distance(a, b, cfg: SphereConfig, distance: str) -> Tensor:
    if distance == "l2":
        a = a.values if isinstance(a, SphericalFeatureMap) else T.as_tensor(a)
        b = b.values if isinstance(b, SphericalFeatureMap) else T.as_tensor(b)
        per_pixel = T.sum(T.square(a - b), axis=-1)
    else:
        per_pixel = pixel_sphere_distance(a, b, cfg)
    return T.mean(per_pixel) if cfg.reduction == "mean" else T.sum(per_pixel)


def decomposition_loss(per_block_d: Sequence, per_block_r: Sequence, mode: str = "consistent",
                       cfg: SphereConfig = SphereConfig(), distance: str = "sphere"):
    """Return ``(dec, align, sepn)``.

    ``align`` and ``sepn`` average the per-block distances between the depth and
    RGB halves over the P blocks. ``consistent`` returns
    ``align + (1 - sepn)^2`` (minimum at align=0, sepn=1); ``verbatim`` returns
    ``align - (1 - sepn)^2``.
    """
    if mode not in DEC_MODES:
        raise ValueError(f"unknown decomposition mode {mode!r}")
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}")
    if len(per_block_d) != len(per_block_r) or not per_block_d:
        raise ShapeError(f"per-block lists must be non-empty and equal length "
                         f"({len(per_block_d)} vs {len(per_block_r)})")
    n = len(per_block_d)
    align = sepn = 0.0
    for (da, ds), (ra, rs) in zip(per_block_d, per_block_r):
        align = align + _block_distance(da, ra, cfg, distance)
        sepn = sepn + _block_distance(ds, rs, cfg, distance)
    align = T.as_tensor(align) * (1.0 / n)
    sepn = T.as_tensor(sepn) * (1.0 / n)
    gap = T.square(1 - sepn)
    dec = align + gap if mode == "consistent" else align - gap
    return dec, align, sepn


def scr_quotient(pos: Tensor, neg: Tensor, floor: float = SCR_FLOOR) -> Tensor:
    """``sum_k pos[k] / max(sum_n neg[k, n], floor)`` for ``pos`` (K,), ``neg`` (K, N)."""
    pos, neg = T.as_tensor(pos), T.as_tensor(neg)
    if neg.ndim != 2 or neg.shape[1] < 1:
        raise ValueError("contrastive loss needs at least one negative per anchor")
    den = T.sum(neg, axis=1)
    if np.any(den.data < floor):
        log.warning("degenerate contrastive batch: negative distance sum below %g", floor)
        den = T.clamp(den, lo=floor)
    return T.sum(pos / den)


def scr_loss(anchors, positives, negatives, encoder: Callable[[Tensor], Tensor],
             cfg: SphereConfig = SphereConfig()) -> Tensor:
    """Contrastive refinement loss over K anchors with one positive and N negatives each.

    ``anchors``/``positives``: (K, m, m); ``negatives``: (K, N, m, m).
    ``encoder`` maps a (B, m, m, 1) batch to Euclidean features (B, m, m, C),
    which are placed on the sphere before measuring distances.
    """
    anchors = np.asarray(anchors)
    positives = np.asarray(positives)
    negatives = np.asarray(negatives)
    if negatives.ndim != 4 or negatives.shape[1] == 0:
        raise ValueError("contrastive loss needs at least one negative per anchor")
    k, n = negatives.shape[:2]
    if anchors.shape[0] != k or positives.shape != anchors.shape or negatives.shape[2:] != anchors.shape[1:]:
        raise ShapeError("anchor/positive/negative patch shapes disagree")
    batch = np.concatenate([anchors, positives, negatives.reshape((-1,) + anchors.shape[1:])])
    feats = encoder(batch[..., None])
    sph = exp_map(feats, cfg).values
    if cfg.variant == "verbatim":
        sph = _renormalize(sph, cfg.radius)
    a = sph[:k]
    p = sph[k:2 * k]
    neg = T.reshape(sph[2 * k:], (k, n) + sph.shape[1:])
    a_rep = T.reshape(a, (k, 1) + a.shape[1:])
    reduce_axes = (-2, -1)
    pos_d = _reduce_pixels(pixel_sphere_distance(a, p, cfg), reduce_axes, cfg.reduction)
    neg_d = _reduce_pixels(_pairwise(a_rep, neg, cfg), reduce_axes, cfg.reduction)
    return scr_quotient(pos_d, neg_d)


def _pairwise(a: Tensor, b: Tensor, cfg: SphereConfig) -> Tensor:
    r = cfg.radius
    return T.sum(T.square(a - b), axis=-1) * (0.5 / (r * r))


def _reduce_pixels(x: Tensor, axes, reduction: str) -> Tensor:
    return T.mean(x, axis=axes) if reduction == "mean" else T.sum(x, axis=axes)


def total_loss(pixel_depth=0.0, pixel_rgb=0.0, dec=0.0, scr=0.0, weights: LossWeights = LossWeights(),
               scr_epoch: bool = True, dec_align=0.0, dec_sepn=0.0) -> LossReport:
    """Weighted sum; the contrastive term is dropped on non-refinement epochs."""
    a3 = weights.alpha3 if scr_epoch else 0.0
    total = pixel_depth + weights.alpha1 * pixel_rgb + weights.alpha2 * dec + a3 * scr

    def val(x):
        return float(x.item()) if isinstance(x, Tensor) else float(x)

    report = LossReport(val(pixel_depth), val(pixel_rgb), val(dec_align), val(dec_sepn),
                        val(dec), val(scr), val(total))
    report.tensor = total if isinstance(total, Tensor) else None
    return report


def loss_fields() -> list[str]:
    return [f.name for f in fields(LossReport) if f.name != "tensor"]
