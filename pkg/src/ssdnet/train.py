"""Training loop with the periodic contrastive refinement and RMSE evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_model
from .config import RunConfig, model_config_to_dict
from .data import ScenePair, bicubic_resample, rmse
from .losses import LossReport, decomposition_loss, pixel_loss, total_loss
from .network import SSDNet
from .optim import Adam, cosine_lr
from .refine import DefectClassifier, sample_triplets, scr_step
from .tensor import NumericError

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "step") + LossReport.CSV_FIELDS


@dataclass
class Batch:
    lr: np.ndarray  # (B, h, w, 1)
    rgb: np.ndarray  # (B, H, W, 3)
    gt: np.ndarray  # (B, H, W, 1)


def crop_batch(scenes: list[ScenePair], crop: int, rng: np.random.Generator) -> Batch:
    """Aligned random crops; HR offsets are multiples of the scale so the LR
    crop covers exactly the same area."""
    lrs, rgbs, gts = [], [], []
    for s in scenes:
        k = s.scale
        h, w = s.depth_hr.shape
        c = min(crop, h - h % k, w - w % k)
        y = int(rng.integers(0, (h - c) // k + 1)) * k
        x = int(rng.integers(0, (w - c) // k + 1)) * k
        gts.append(s.depth_hr.values[y:y + c, x:x + c, None])
        rgbs.append(s.rgb.values[y:y + c, x:x + c])
        lrs.append(s.depth_lr.values[y // k:(y + c) // k, x // k:(x + c) // k, None])
    return Batch(np.stack(lrs), np.stack(rgbs), np.stack(gts))


def compute_loss(model: SSDNet, batch: Batch, cfg: RunConfig) -> LossReport:
    out = model.forward(batch.lr, batch.rgb)
    pd = pixel_loss(out.depth, T.as_tensor(batch.gt, like=out.depth))
    pr = pixel_loss(out.rgb, T.as_tensor(batch.rgb, like=out.rgb)) if cfg.alpha1 > 0 else 0.0
    dec = align = sepn = 0.0
    if cfg.alpha2 > 0 and out.enc_depth.per_block:
        dec, align, sepn = decomposition_loss(out.enc_depth.per_block, out.enc_rgb.per_block,
                                              cfg.dec_mode, cfg.sphere(), cfg.dec_distance)
    return total_loss(pd, pr, dec, 0.0, cfg.weights(), scr_epoch=False, dec_align=align, dec_sepn=sepn)


def train_step(model: SSDNet, batch: Batch, cfg: RunConfig, opt: Adam) -> LossReport:
    opt.zero_grad()
    report = compute_loss(model, batch, cfg)
    if not math.isfinite(report.total):
        raise NumericError(f"non-finite loss: {report}")
    T.backward(report.tensor)
    bad = [p.name for p in opt.params if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise NumericError(f"non-finite gradients in {bad[:5]}")
    opt.step()
    return report


@dataclass
class EvalRow:
    id: str
    model: float
    bicubic: float


def bicubic_baseline(scene: ScenePair) -> np.ndarray:
    h, w = scene.depth_hr.shape
    return bicubic_resample(scene.depth_lr.values, h, w)


def evaluate(model: SSDNet, scenes: list[ScenePair]) -> list[EvalRow]:
    if not scenes:
        raise ValueError("empty split")
    rows = []
    for s in scenes:
        pred = model.super_resolve(s.depth_lr.values, s.rgb.values, s.scale)
        rows.append(EvalRow(s.id, rmse(pred, s.depth_hr), rmse(bicubic_baseline(s), s.depth_hr)))
    return rows


def mean_rmse(rows: list[EvalRow]) -> tuple[float, float]:
    return float(np.mean([r.model for r in rows])), float(np.mean([r.bicubic for r in rows]))


def refinement_step(model: SSDNet, dpc: DefectClassifier, scenes: list[ScenePair], cfg: RunConfig,
                    opt: Adam, rng: np.random.Generator) -> LossReport:
    """Sample anchors from current predictions and update the depth encoder once."""
    triplets = []
    picks = rng.choice(len(scenes), size=min(cfg.n_anchors, len(scenes)), replace=False)
    for i in picks:
        s = scenes[int(i)]
        pred = np.clip(model.super_resolve(s.depth_lr.values, s.rgb.values, s.scale), 0, 1)
        triplets += sample_triplets(pred, s.depth_hr.values, s.rgb.values, dpc, cfg.patch,
                                    cfg.negatives, 1, int(rng.integers(2 ** 31)), cfg.defects())
    return scr_step(model, triplets, opt, cfg.weights(), cfg.sphere())


@dataclass
class TrainResult:
    model: SSDNet
    history: list[dict] = field(default_factory=list)
    val: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, model, bicubic)
    best_epoch: int = 0
    best_rmse: float = float("inf")
    seconds: float = 0.0

    def epoch_loss(self, epoch: int) -> float:
        vals = [h["total"] for h in self.history if h["epoch"] == epoch and h["scr"] == 0.0]
        return float(np.mean(vals)) if vals else float("nan")


def train(cfg: RunConfig, train_scenes: list[ScenePair], val_scenes: list[ScenePair],
          dpc: DefectClassifier | None = None, out_dir=None, model: SSDNet | None = None) -> TrainResult:
    """Adam on the weighted objective; every ``scr_period``-th epoch (1-based)
    ends with one refinement step when enabled. Keeps the best-validation weights."""
    if not train_scenes:
        raise ValueError("empty dataset")
    use_scr = cfg.scr and cfg.alpha3 > 0
    if use_scr and dpc is None:
        raise ValueError("refinement is enabled but no defect classifier was given")
    start = time.perf_counter()
    model = model or SSDNet(cfg.model_config(), cfg.seed)
    opt = Adam(model.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
    scr_opt = Adam(model.encoder_depth.parameters(), cfg.scr_lr, (cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    out_dir = Path(out_dir) if out_dir else None
    writer = fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
    best_state = None
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            if cfg.cosine:
                opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
            order = rng.permutation(len(train_scenes))
            for i in range(0, len(order), cfg.batch):
                batch = crop_batch([train_scenes[j] for j in order[i:i + cfg.batch]], cfg.crop, rng)
                report = train_step(model, batch, cfg, opt)
                step += 1
                _log(result, writer, epoch, step, report)
            if use_scr and epoch % cfg.scr_period == 0:
                report = refinement_step(model, dpc, train_scenes, cfg, scr_opt, rng)
                step += 1
                _log(result, writer, epoch, step, report)
            if val_scenes:
                m, b = mean_rmse(evaluate(model, val_scenes))
                result.val.append((epoch, m, b))
                log.info("epoch %d loss %.4g val rmse %.4g (bicubic %.4g)", epoch, result.epoch_loss(epoch), m, b)
                if m < result.best_rmse:
                    result.best_rmse, result.best_epoch = m, epoch
                    best_state = {k: v.copy() for k, v in model.state_dict().items()}
                    if out_dir:
                        save_model(out_dir / "model.ckpt", model, model_meta(model, cfg.scale))
    finally:
        if fh:
            fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    elif out_dir:
        save_model(out_dir / "model.ckpt", model, model_meta(model, cfg.scale))
    result.seconds = time.perf_counter() - start
    return result


def _log(result: TrainResult, writer, epoch: int, step: int, report: LossReport):
    row = dict(zip(LOG_FIELDS, [epoch, step] + report.row()))
    result.history.append(row)
    if writer:
        writer.writerow([epoch, step] + [f"{v:.8g}" for v in report.row()])


def model_meta(model: SSDNet, scale: int) -> dict:
    return {"model": model_config_to_dict(model.cfg), "scale": scale}
