"""Contrastive refinement: synthetic defects, the defect-patch classifier and
anchor/positive/negative sampling for fine-tuning the depth encoder."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from . import tensor as T
from .losses import LossReport, LossWeights, scr_loss, total_loss
from .nn import Conv2d, Module
from .optim import Adam
from .sphere import SphereConfig
from .tensor import Parameter, ShapeError

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
ANCHOR_RETRIES = 5
FLAT_RETRIES = 20


class DefectKind(enum.IntEnum):
    PERFECT = 0
    NOISY = 1
    BLURRY = 2
    TEXTURE_OVER_TRANSFERRED = 3


@dataclass(frozen=True)
class DefectParams:
    noise_sigma: float = 0.05
    blur_kernel: int = 7
    blur_sigma: float = 2.0
    texture_beta: float = 0.3

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.blur_kernel < 3 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be odd and >= 3")
        if not 0 <= self.texture_beta <= 1:
            raise ValueError("texture_beta must lie in [0, 1]")


@dataclass
class PatchTriplet:
    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # (N, m, m)
    label: DefectKind
    location: tuple[int, int]
    negative_locations: list[tuple[int, int]] = field(default_factory=list)


def synthesize_defect(patch: np.ndarray, kind: DefectKind, rgb_patch: np.ndarray | None = None,
                      params: DefectParams = DefectParams(), seed=None) -> np.ndarray:
    """Apply one defect to a normalized depth patch (any H x W)."""
    patch = np.asarray(patch, dtype=np.float64)
    kind = DefectKind(kind)
    if kind == DefectKind.PERFECT:
        return patch.copy()
    if kind == DefectKind.NOISY:
        rng = np.random.default_rng(seed)
        return np.clip(patch + rng.normal(0.0, params.noise_sigma, patch.shape), 0.0, 1.0)
    if kind == DefectKind.BLURRY:
        return gaussian_filter(patch, params.blur_sigma, mode="reflect", radius=params.blur_kernel // 2)
    if rgb_patch is None:
        raise ValueError("texture over-transfer needs the co-located RGB patch")
    rgb_patch = np.asarray(rgb_patch, dtype=np.float64)
    if rgb_patch.shape != patch.shape + (3,):
        raise ShapeError(f"rgb patch {rgb_patch.shape} does not match depth {patch.shape}")
    b = params.texture_beta
    return np.clip((1 - b) * patch + b * rgb_patch @ LUMA, 0.0, 1.0)


@dataclass
class DpcDataset:
    patches: np.ndarray  # (n, m, m)
    labels: np.ndarray  # (n,)
    sources: np.ndarray  # (n, m, m) ground-truth crops before the defect

    def __len__(self):
        return len(self.labels)


def _crop(img, y, x, m):
    return img[y:y + m, x:x + m]


def make_dpc_dataset(scenes, m: int = 32, params: DefectParams = DefectParams(), count: int = 400,
                     seed: int = 0) -> DpcDataset:
    """Class-balanced labelled defect patches cropped from ground-truth scenes.

    Constant crops are re-drawn (up to 20 times): they are identical under the
    perfect and blurry labels.
    """
    if count % 4:
        raise ValueError("count must be divisible by 4 for class balance")
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes")
    for s in scenes:
        if min(s.depth_hr.shape) < m:
            raise ValueError(f"scene {s.id} smaller than patch size {m}")
    rng = np.random.default_rng(seed)
    patches, labels, sources = [], [], []
    for i in range(count):
        kind = DefectKind(i % 4)
        for _ in range(FLAT_RETRIES):
            s = scenes[rng.integers(len(scenes))]
            h, w = s.depth_hr.shape
            y, x = rng.integers(0, h - m + 1), rng.integers(0, w - m + 1)
            src = _crop(s.depth_hr.values, y, x, m)
            if np.ptp(src) > 0:
                break
        rgb = _crop(s.rgb.values, y, x, m)
        patches.append(synthesize_defect(src, kind, rgb, params, seed=rng.integers(2 ** 32)))
        labels.append(int(kind))
        sources.append(src.copy())
    return DpcDataset(np.stack(patches), np.array(labels), np.stack(sources))


HIGHPASS_GAIN = 10.0


def patch_features(x: np.ndarray) -> np.ndarray:
    """Stack the mean-removed patch with an amplified high-pass residual.

    Fine-scale ripples from noise or transferred texture are a few percent of
    the depth range; the gain makes them visible to a small network.
    """
    x = x - x.mean(axis=(-2, -1), keepdims=True)
    smooth = uniform_filter(x, size=3, mode="reflect", axes=(-2, -1))
    return np.stack([x, HIGHPASS_GAIN * (x - smooth)], axis=-1)


class DefectClassifier(Module):
    """Four conv + average-pool stages, global average pool, linear head to 4 logits."""

    def __init__(self, m: int = 32, widths=(8, 16, 32, 32), seed: int = 0):
        if m % 16:
            raise ValueError("patch size must be divisible by 16")
        rng = np.random.default_rng(seed)
        self.m = m
        chans = (2,) + tuple(widths)
        self.stage = [Conv2d(chans[i], chans[i + 1], "k3x3", rng) for i in range(4)]
        self.head = Parameter(rng.normal(0, np.sqrt(1 / widths[-1]), (widths[-1], len(DefectKind))))
        self.head_bias = Parameter(np.zeros(len(DefectKind)))
        self.assign_names("dpc/")

    def forward(self, patches) -> T.Tensor:
        x = np.asarray(patches, dtype=T.default_dtype() if not self.parameters() else self.head.dtype)
        if x.shape[-2:] != (self.m, self.m):
            raise ShapeError(f"classifier expects {self.m}x{self.m} patches, got {x.shape[-2:]}")
        h = T.as_tensor(patch_features(x), like=self.head)
        for conv in self.stage:
            h = T.avg_pool2d(T.relu(conv(h)), 2)
        h = T.mean(h, axis=(1, 2))
        return T.matmul(h, self.head) + self.head_bias

    def predict(self, patches) -> np.ndarray:
        with T.no_grad():
            logits = self.forward(np.asarray(patches)).data
        return np.argmax(logits, axis=-1)


def classify_patch(model: DefectClassifier, patch) -> DefectKind:
    patch = np.asarray(patch)
    if patch.shape != (model.m, model.m):
        raise ShapeError(f"expected a {model.m}x{model.m} patch, got {patch.shape}")
    # a constant patch shows no noise, texture or blur; the classifier never sees one in training
    if np.ptp(patch) == 0:
        return DefectKind.PERFECT
    return DefectKind(int(model.predict(patch[None])[0]))


def accuracy(model: DefectClassifier, data: DpcDataset) -> float:
    preds = np.concatenate([model.predict(data.patches[i:i + 256]) for i in range(0, len(data), 256)])
    return float(np.mean(preds == data.labels))


def split_dataset(data: DpcDataset, seed: int = 0, holdout: float = 0.2):
    order = np.random.default_rng(seed).permutation(len(data))
    n_test = int(round(holdout * len(data)))
    test, train = order[:n_test], order[n_test:]

    def take(idx):
        return DpcDataset(data.patches[idx], data.labels[idx], data.sources[idx])

    return take(train), take(test)


def train_dpc(dataset: DpcDataset, epochs: int = 30, lr: float = 3e-3, batch_size: int = 32,
              seed: int = 0, widths=(8, 16, 32, 32)):
    """Train on 80% of ``dataset``; return ``(model, held-out accuracy)`` for the best epoch."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    train, test = split_dataset(dataset, seed)
    model = DefectClassifier(dataset.patches.shape[-1], widths, seed)
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    best_acc, best_state = -1.0, model.state_dict()
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            opt.zero_grad()
            loss = T.cross_entropy(model(train.patches[idx]), train.labels[idx])
            T.backward(loss)
            opt.step()
        acc = accuracy(model, test) if len(test) else accuracy(model, train)
        log.debug("dpc epoch %d held-out accuracy %.3f", epoch + 1, acc)
        if acc > best_acc:
            best_acc, best_state = acc, {k: v.copy() for k, v in model.state_dict().items()}
        if best_acc == 1.0:
            break
    model.load_state_dict(best_state)
    return model, best_acc


def sample_triplets(pred: np.ndarray, gt: np.ndarray, rgb: np.ndarray, model: DefectClassifier,
                    m: int = 32, n_neg: int = 8, k: int = 1, seed: int = 0,
                    params: DefectParams = DefectParams()) -> list[PatchTriplet]:
    """Draw up to ``k`` anchors from the prediction; perfect-looking anchors are
    re-drawn up to five times and then skipped."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    h, w = gt.shape
    if h < m or w < m or pred.shape != gt.shape:
        raise ValueError(f"images {pred.shape}/{gt.shape} too small for {m}x{m} patches")
    if (h - m + 1) * (w - m + 1) < 2:
        raise ValueError("need at least two distinct patch locations")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        label = DefectKind.PERFECT
        for _ in range(1 + ANCHOR_RETRIES):
            y, x = int(rng.integers(0, h - m + 1)), int(rng.integers(0, w - m + 1))
            label = classify_patch(model, _crop(pred, y, x, m))
            if label != DefectKind.PERFECT:
                break
        if label == DefectKind.PERFECT:
            continue
        degraded = synthesize_defect(gt, label, rgb, params, seed=rng.integers(2 ** 32))
        locs = []
        while len(locs) < n_neg:
            loc = (int(rng.integers(0, h - m + 1)), int(rng.integers(0, w - m + 1)))
            if loc != (y, x):
                locs.append(loc)
        out.append(PatchTriplet(
            anchor=_crop(pred, y, x, m).copy(),
            positive=_crop(gt, y, x, m).copy(),
            negatives=np.stack([_crop(degraded, ny, nx, m) for ny, nx in locs]),
            label=label, location=(y, x), negative_locations=locs))
    return out


def stack_triplets(triplets: list[PatchTriplet]):
    return (np.stack([t.anchor for t in triplets]), np.stack([t.positive for t in triplets]),
            np.stack([t.negatives for t in triplets]))


def depth_encoder_fn(model):
    def encode(batch):
        return model.encode(batch, "depth").phi
    return encode


def scr_step(model, triplets: list[PatchTriplet], optimizer, weights: LossWeights = LossWeights(),
             sphere: SphereConfig | None = None) -> LossReport:
    """One contrastive update of the depth encoder only; other modules stay frozen."""
    if not triplets:
        return LossReport()
    sphere = sphere or model.cfg.sphere
    anchors, positives, negatives = stack_triplets(triplets)
    model.zero_grad()
    loss = scr_loss(anchors, positives, negatives, depth_encoder_fn(model), sphere)
    report = total_loss(scr=loss, weights=weights, scr_epoch=True)
    if report.tensor is not None and report.tensor.requires_grad:
        T.backward(report.tensor)
    encoder_params = model.encoder_depth.parameters()
    keep = {id(p) for p in encoder_params}
    for p in model.parameters():
        if id(p) not in keep:
            p.grad = None
    optimizer.step(encoder_params)
    return report
