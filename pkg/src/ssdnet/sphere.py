"""Exponential/logarithmic maps between feature maps and the radius-r hypersphere.

Feature maps are channel-last tensors ``(..., H, W, d)``. The exponential map
is taken at the north pole ``N = (0, ..., 0, r)`` and appends one channel.

Two readings of the exponential map are supported:

``tangent_lift``
    The tangent vector ``(v, 0)`` is wrapped along the geodesic, so outputs
    lie exactly on the sphere and ``log_map`` inverts ``exp_map``.
``verbatim``
    The lifted vector ``(v, r)`` is used as written in the original
    definition. Outputs are generally *off* the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import NumericError, ShapeError, Tensor

VARIANTS = ("tangent_lift", "verbatim")
REDUCTIONS = ("mean", "sum")
CUT_LOCUS_MARGIN = 0.99
ON_SPHERE_RTOL = 1e-5
ANTIPODAL_MARGIN = 1e-6


@dataclass(frozen=True)
class SphereConfig:
    radius: float = 1.0
    variant: str = "tangent_lift"
    reduction: str = "mean"
    prescale: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown sphere variant {self.variant!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass
class SphericalFeatureMap:
    """Points on (or, for ``verbatim``, near) the radius-``radius`` sphere.

    ``scale`` is the uniform pre-scaling applied to the Euclidean input; it is
    undone by :func:`log_map`.
    """

    values: Tensor
    radius: float
    scale: Tensor | float = 1.0
    variant: str = "tangent_lift"

    @property
    def shape(self):
        return self.values.shape


def _norms(data: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(data * data, axis=-1))


def cut_locus_scale(v: Tensor, radius: float) -> Tensor:
    """Uniform factor per map keeping every pixel inside 0.99*pi*r of the pole.

    A "map" is everything but the leading batch axes of ``(B, H, W, d)``;
    lower-rank inputs are treated as one map. The factor is 1 unless the
    largest pixel norm exceeds the limit, and is differentiable in ``v``.
    """
    sq = T.sum(T.square(v), axis=-1)
    axes = (-2, -1) if v.ndim >= 4 else None
    peak2 = T.amax(sq, axis=axes, keepdims=True)
    if axes is None:
        peak2 = T.reshape(peak2, (1,) * (v.ndim - 1))
    limit = CUT_LOCUS_MARGIN * np.pi * radius
    factor = limit / T.sqrt(T.clamp(peak2, lo=limit * limit))
    return T.reshape(factor, factor.shape + (1,))


def exp_map(phi, cfg: SphereConfig = SphereConfig()) -> SphericalFeatureMap:
    phi = T.as_tensor(phi)
    r = cfg.radius
    if cfg.variant == "verbatim":
        # v_bar = (v, r); theta^2 = (|v|^2 + r^2) / r^2
        q = (T.sum(T.square(phi), axis=-1, keepdims=True) + r * r) * (1 / (r * r))
        s = T.sinc_sqrt(q)
        last = T.cos_sqrt(q) * r + s * r
        return SphericalFeatureMap(T.concat([phi * s, last], -1), r, 1.0, cfg.variant)

    factor = 1.0
    if cfg.prescale:
        factor = cut_locus_scale(phi, r)
        phi = phi * factor
    elif T.is_strict() and np.any(_norms(phi.data) >= np.pi * r):
        raise NumericError("exp_map: tangent vector at or beyond the cut locus (|v| >= pi*r)")
    q = T.sum(T.square(phi), axis=-1, keepdims=True) * (1 / (r * r))
    out = T.concat([phi * T.sinc_sqrt(q), T.cos_sqrt(q) * r], -1)
    return SphericalFeatureMap(out, r, factor, cfg.variant)


def _as_spherical(x, cfg: SphereConfig) -> SphericalFeatureMap:
    if isinstance(x, SphericalFeatureMap):
        return x
    return SphericalFeatureMap(T.as_tensor(x), cfg.radius, 1.0, cfg.variant)


def _check_on_sphere(x: Tensor, r: float, what: str):
    dev = np.abs(_norms(x.data) - r) / r
    if dev.size and dev.max() > ON_SPHERE_RTOL:
        raise NumericError(f"{what}: input off the radius-{r} sphere (rel. deviation {dev.max():.2e})")


def log_map(x, cfg: SphereConfig = SphereConfig()) -> Tensor:
    """Inverse of :func:`exp_map`; drops the (zero) last tangent coordinate."""
    sx = _as_spherical(x, cfg)
    xv = sx.values
    r = sx.radius
    d = xv.shape[-1] - 1
    xt = xv[..., :d]
    c = xv[..., d:]
    s2 = T.sum(T.square(xt), axis=-1, keepdims=True)

    if sx.variant == "verbatim":
        # verbatim points are off the sphere; measure the angle of their radial projection
        norm = T.sqrt(s2 + T.square(c))
        psi = T.arccos(T.clamp(c / norm, -1.0, 1.0))
        xt = xt * (r / norm)
        if T.is_strict() and np.any(psi.data >= np.pi - ANTIPODAL_MARGIN):
            raise NumericError("log_map: antipodal point (cut locus)")
        return T.x_over_sin(psi) * xt

    if T.is_strict():
        _check_on_sphere(xv, r, "log_map")
        psi = np.arctan2(np.sqrt(s2.data), c.data)
        if np.any(psi >= np.pi - ANTIPODAL_MARGIN):
            raise NumericError("log_map: antipodal point (cut locus)")
    # psi / sin(psi) = atan2(s, c) * |x| / s, which stays smooth at the pole
    factor = T.atan_ratio(s2, c) * T.sqrt(s2 + T.square(c))
    out = factor * xt
    if isinstance(sx.scale, Tensor) or sx.scale != 1:
        out = out / sx.scale
    return out


def pixel_sphere_distance(a, b, cfg: SphereConfig = SphereConfig()) -> Tensor:
    """Per-pixel ``1 - <a, b> / r^2`` in [0, 2]; shape ``a.shape[:-1]``."""
    a, b = _as_spherical(a, cfg), _as_spherical(b, cfg)
    if a.shape != b.shape:
        raise ShapeError(f"sphere_distance: shape mismatch {a.shape} vs {b.shape}")
    r = cfg.radius
    av, bv = a.values, b.values
    if cfg.variant == "verbatim" or a.variant == "verbatim":
        av = _renormalize(av, r)
        bv = _renormalize(bv, r)
    elif T.is_strict():
        _check_on_sphere(av, r, "sphere_distance")
        _check_on_sphere(bv, r, "sphere_distance")
    # chord form |a - b|^2 / 2r^2 equals 1 - <a, b>/r^2 on the sphere, is exactly
    # zero for identical inputs and avoids cancellation for nearby points
    return T.sum(T.square(av - bv), axis=-1) * (0.5 / (r * r))


def _renormalize(x: Tensor, r: float) -> Tensor:
    return x * (r / T.sqrt(T.sum(T.square(x), axis=-1, keepdims=True)))


def _reduce(per_pixel: Tensor, reduction: str) -> Tensor:
    return T.mean(per_pixel) if reduction == "mean" else T.sum(per_pixel)


def sphere_distance(a, b, cfg: SphereConfig = SphereConfig()) -> Tensor:
    """Spherical distance between two spherical feature maps (mean or sum over pixels)."""
    return _reduce(pixel_sphere_distance(a, b, cfg), cfg.reduction)


def spherical_feature_distance(a, b, cfg: SphereConfig = SphereConfig()) -> Tensor:
    """Distance of two Euclidean feature maps after mapping both onto the sphere."""
    return sphere_distance(exp_map(a, cfg), exp_map(b, cfg), cfg)


def cosine_distance_raw(a, b) -> Tensor:
    """Mean over pixels of ``1 - cos(a[i, j, :], b[i, j, :])`` on raw features."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_distance_raw: shape mismatch {a.shape} vs {b.shape}")
    na = T.sqrt(T.sum(T.square(a), axis=-1))
    nb = T.sqrt(T.sum(T.square(b), axis=-1))
    if np.any(na.data == 0) or np.any(nb.data == 0):
        raise NumericError("cosine_distance_raw: zero-norm pixel vector")
    return T.mean(1 - T.sum(a * b, axis=-1) / (na * nb))


def l2_distance(a, b) -> Tensor:
    """Mean over pixels of the Euclidean distance between channel vectors."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance: shape mismatch {a.shape} vs {b.shape}")
    return T.mean(T.sqrt(T.sum(T.square(a - b), axis=-1)))


def norm_deviation(x: SphericalFeatureMap) -> np.ndarray:
    """Per-pixel ``|x| - r``; nonzero in general for the verbatim variant."""
    return _norms(x.values.data) - x.radius
