"""Finite-difference gradient suites over every differentiable operation.

Each suite builds small random inputs in 64-bit precision and returns a
:class:`~ssdnet.tensor.GradCheckReport`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .losses import decomposition_loss, pixel_loss, scr_loss, total_loss
from .network import ModelConfig, SSDNet
from .nn import ChannelAttention, GatedFFN, RestormerBlock, channel_attention, gated_ffn
from .sphere import SphereConfig, exp_map, log_map, pixel_sphere_distance, spherical_feature_distance
from .tensor import GradCheckReport, Parameter, gradient_check

TOL = 1e-4
MODEL_TOL = 1e-3


def _p(rng, shape, name, lo=-1.0, hi=1.0):
    return Parameter(rng.uniform(lo, hi, shape), name=name)


def _unary(op, lo=-1.0, hi=1.0, **kw):
    def run(rng):
        x = _p(rng, (3, 4), "x", lo, hi)
        w = rng.normal(size=(3, 4))
        return gradient_check(lambda: T.sum(op(x, **kw) * w), [x], tol=TOL)
    return run


def _binary(op, lo=0.5, hi=1.5):
    def run(rng):
        a, b = _p(rng, (3, 4), "a", lo, hi), _p(rng, (3, 4), "b", lo, hi)
        c = _p(rng, (4,), "c_broadcast", lo, hi)
        w = rng.normal(size=(3, 4))
        return gradient_check(lambda: T.sum((op(a, b) + op(a, c)) * w), [a, b, c], tol=TOL)
    return run


def _clamp(x):
    return T.clamp(x, -0.5, 0.5)


def _atan_ratio(rng):
    s2 = _p(rng, (6,), "s2", 1e-6, 2.0)
    c = _p(rng, (6,), "c", -1.0, 1.0)
    return gradient_check(lambda: T.sum(T.atan_ratio(s2, c)), [s2, c], tol=TOL)


def _reductions(rng):
    x = _p(rng, (2, 3, 4), "x")
    w = rng.normal(size=(2, 4))
    return gradient_check(lambda: T.sum(T.amax(x, axis=1) * w) + T.mean(T.square(x))
                          + T.sum(T.sum(x, axis=(0, 2)) * 0.3), [x], tol=TOL)


def _shape_ops(rng):
    a, b = _p(rng, (2, 3, 4), "a"), _p(rng, (2, 3, 2), "b")
    w = rng.normal(size=(3, 2, 6))

    def f():
        c = T.concat([a, b], -1)
        t = T.transpose(c, (1, 0, 2))
        return T.sum(T.reshape(t, (3, 12))[:, ::2] * T.as_tensor(w.reshape(3, 12)[:, ::2]))
    return gradient_check(f, [a, b], tol=TOL)


def _matmul(rng):
    a, b = _p(rng, (2, 3, 4), "a"), _p(rng, (2, 4, 5), "b")
    w = rng.normal(size=(2, 3, 5))
    return gradient_check(lambda: T.sum(T.matmul(a, b) * w), [a, b], tol=TOL)


def _softmax(rng):
    x = _p(rng, (3, 5), "x", -2, 2)
    w = rng.normal(size=(3, 5))
    return gradient_check(lambda: T.sum(T.softmax(x, -1) * w), [x], tol=TOL)


def _cross_entropy(rng):
    x = _p(rng, (6, 4), "logits", -2, 2)
    labels = rng.integers(0, 4, 6)
    return gradient_check(lambda: T.cross_entropy(x, labels), [x], tol=TOL)


def _conv(kind):
    def run(rng):
        c = 3
        shape = {"k3x3": (3, 3, c, 2), "k1x1": (c, 2), "depthwise3x3": (3, 3, c)}[kind]
        x = _p(rng, (2, 5, 4, c), "x")
        k = _p(rng, shape, "kernel")
        w = rng.normal(size=(2, 5, 4, shape[-1]))
        return gradient_check(lambda: T.sum(T.conv2d(x, k, kind) * w), [x, k], tol=TOL)
    return run


def _pool_resample(rng):
    x = _p(rng, (1, 4, 6, 2), "x")
    rows, cols = rng.normal(size=(5, 4)), rng.normal(size=(3, 6))
    w = rng.normal(size=(1, 5, 3, 2))
    return gradient_check(lambda: T.sum(T.resample2d(x, rows, cols) * w)
                          + T.sum(T.square(T.avg_pool2d(x, 2))), [x], tol=TOL)


def _layer_norm(rng):
    x = _p(rng, (2, 3, 3, 5), "x")
    g, b = _p(rng, (5,), "gain"), _p(rng, (5,), "bias")
    w = rng.normal(size=x.shape)
    return gradient_check(lambda: T.sum(T.layer_norm_channels(x, g, b) * w), [x, g, b], tol=TOL)


def _module_check(make, fn):
    def run(rng):
        mod = make(rng).assign_names()
        x = _p(rng, (1, 4, 4, 8), "x")
        w = rng.normal(size=(1, 4, 4, 8))
        return gradient_check(lambda: T.sum(fn(mod, x) * w), [x] + mod.parameters(), tol=TOL)
    return run


def _sphere_maps(variant):
    def run(rng):
        cfg = SphereConfig(radius=1.5, variant=variant)
        v = _p(rng, (2, 3, 3, 4), "v", -0.8, 0.8)
        w = rng.normal(size=(2, 3, 3, 5))
        wl = rng.normal(size=(2, 3, 3, 4))

        def f():
            x = exp_map(v, cfg)
            out = T.sum(x.values * w)
            if variant == "tangent_lift":
                out = out + T.sum(log_map(x, cfg) * wl)
            return out
        return gradient_check(f, [v], tol=TOL)
    return run


def _sphere_prescaled(rng):
    # norms beyond the cut-locus limit exercise the differentiable pre-scale
    cfg = SphereConfig()
    v = _p(rng, (1, 3, 3, 4), "v", -3.0, 3.0)
    wl = rng.normal(size=(1, 3, 3, 4))
    return gradient_check(lambda: T.sum(log_map(exp_map(v, cfg), cfg) * wl)
                          + T.sum(exp_map(v, cfg).values), [v], tol=TOL)


def _sphere_distance(rng):
    cfg = SphereConfig()
    a, b = _p(rng, (2, 3, 3, 4), "a"), _p(rng, (2, 3, 3, 4), "b")
    return gradient_check(lambda: spherical_feature_distance(a, b, cfg)
                          + T.sum(pixel_sphere_distance(exp_map(a, cfg), exp_map(b, cfg), cfg)), [a, b], tol=TOL)


def _pixel_loss(rng):
    a, b = _p(rng, (2, 4, 4, 1), "pred"), _p(rng, (2, 4, 4, 1), "target")
    return gradient_check(lambda: pixel_loss(a, b) + pixel_loss(a, b, "mean"), [a, b], tol=TOL)


def _dec_loss(mode, distance="sphere"):
    def run(rng):
        cfg = SphereConfig()
        feats = [_p(rng, (4, 4, 8), f"f{i}") for i in range(4)]

        def f():
            blocks = []
            for d in (feats[:2], feats[2:]):
                blocks.append([(exp_map(x[..., :4], cfg), exp_map(x[..., 4:], cfg)) for x in d])
            return decomposition_loss(blocks[0], blocks[1], mode, cfg, distance)[0]
        return gradient_check(f, feats, tol=TOL)
    return run


def _scr_loss(rng):
    cfg = SphereConfig()
    kernel = _p(rng, (3, 3, 1, 4), "encoder_kernel")
    anchors, positives = rng.uniform(size=(2, 4, 4)), rng.uniform(size=(2, 4, 4))
    negatives = rng.uniform(size=(2, 3, 4, 4))

    def encoder(batch):
        return T.conv2d(T.as_tensor(batch, like=kernel), kernel, "k3x3")
    return gradient_check(lambda: scr_loss(anchors, positives, negatives, encoder, cfg), [kernel], tol=TOL)


def _full_model(rng):
    """Weighted total objective through the whole network at toy size."""
    model = SSDNet(ModelConfig(P=2, C=8, heads=2), seed=int(rng.integers(1000)))
    for p in model.parameters():  # leave the zero init so every path carries gradient
        p.data = p.data + rng.normal(0, 0.05, p.shape)
    lr = rng.uniform(size=(1, 2, 2, 1))
    rgb = rng.uniform(size=(1, 8, 8, 3))
    gt = rng.uniform(size=(1, 8, 8, 1))

    def f():
        out = model.forward(lr, rgb)
        dec = decomposition_loss(out.enc_depth.per_block, out.enc_rgb.per_block)[0]
        return total_loss(pixel_loss(out.depth, gt), pixel_loss(out.rgb, rgb), dec).tensor
    return gradient_check(f, model.parameters(), tol=MODEL_TOL, max_entries=3)


SUITES: dict[str, Callable[[np.random.Generator], GradCheckReport]] = {
    "add": _binary(T.add), "sub": _binary(T.sub), "mul": _binary(T.mul), "div": _binary(T.div),
    "neg": _unary(T.neg), "square": _unary(T.square), "sqrt": _unary(T.sqrt, 0.2, 2.0),
    "exp": _unary(T.exp), "log": _unary(T.log, 0.2, 2.0), "sin": _unary(T.sin), "cos": _unary(T.cos),
    "arccos": _unary(T.arccos, -0.9, 0.9), "clamp": _unary(_clamp), "scale": _unary(T.scale, c=2.5),
    "gelu": _unary(T.gelu, -2, 2), "relu": _unary(T.relu),
    "sinc_sqrt": _unary(T.sinc_sqrt, 0.0, 9.0), "cos_sqrt": _unary(T.cos_sqrt, 0.0, 9.0),
    "atan_ratio": _atan_ratio, "x_over_sin": _unary(T.x_over_sin, -2.5, 2.5),
    "reductions": _reductions, "shape_ops": _shape_ops, "matmul": _matmul, "softmax": _softmax,
    "cross_entropy": _cross_entropy,
    "conv2d_k3x3": _conv("k3x3"), "conv2d_k1x1": _conv("k1x1"), "conv2d_depthwise3x3": _conv("depthwise3x3"),
    "pool_resample": _pool_resample, "layer_norm": _layer_norm,
    "channel_attention": _module_check(lambda r: ChannelAttention(8, 2, r),
                                       lambda m, x: channel_attention(x, m, m.heads, m.temperature)),
    "gated_ffn": _module_check(lambda r: GatedFFN(8, 2.0, r), lambda m, x: gated_ffn(x, m)),
    "restormer_block": _module_check(lambda r: RestormerBlock(8, 2, 2.0, r), lambda m, x: m(x)),
    "sphere_maps_tangent_lift": _sphere_maps("tangent_lift"), "sphere_maps_verbatim": _sphere_maps("verbatim"),
    "sphere_prescale": _sphere_prescaled, "sphere_distance": _sphere_distance,
    "loss_pixel": _pixel_loss, "loss_decomposition": _dec_loss("consistent"),
    "loss_decomposition_verbatim": _dec_loss("verbatim"), "loss_decomposition_l2": _dec_loss("consistent", "l2"),
    "loss_scr": _scr_loss, "loss_total_full_model": _full_model,
}


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_suites(names=None, seed: int = 0, extra: dict | None = None) -> list[SuiteResult]:
    suites = dict(SUITES, **(extra or {}))
    names = list(names) if names else list(suites)
    unknown = [n for n in names if n not in suites]
    if unknown:
        raise KeyError(f"unknown gradient suite(s): {unknown}")
    results = []
    with T.precision(np.float64), T.strict(True):
        for i, name in enumerate(names):
            t0 = time.perf_counter()
            report = suites[name](np.random.default_rng(seed + i))
            results.append(SuiteResult(name, report, time.perf_counter() - t0))
    return results
