"""Command-line entry point: ``ssdnet <command> ...``.

Exit codes: 0 success, 1 validation or IO error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_meta, load_model, save_model
from .config import ConfigError, RunConfig, dump_config, load_config, model_config_from_dict, parse_overrides
from .data import (DatasetManifest, DepthMap, PnmError, Record, assign_splits, read_manifest, read_pgm,
                   read_ppm, synth_scene, write_manifest, write_pgm, write_ppm)
from .network import SSDNet
from .refine import DefectClassifier, DefectParams, make_dpc_dataset, train_dpc
from .tensor import NumericError

log = logging.getLogger("ssdnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def cmd_synth_data(args) -> int:
    if args.count < 1:
        raise ValueError("empty dataset")
    out = Path(args.out)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    ids = [f"scene{i:05d}" for i in range(args.count)]
    splits = assign_splits(ids, args.seed)
    records = []
    for i, sid in enumerate(ids):
        pair = synth_scene(args.size, args.size, args.shapes, seed=args.seed * 100003 + i, scene_id=sid)
        rgb, depth = f"rgb/{sid}.ppm", f"depth/{sid}.pgm"
        write_ppm(out / rgb, pair.rgb)
        write_pgm(out / depth, pair.depth_hr)
        records.append(Record(sid, rgb, depth, splits[sid]))
    write_manifest(out / "manifest.tsv", DatasetManifest(out, records, args.seed))
    counts = {s: sum(r.split == s for r in records) for s in ("train", "val", "test")}
    print(f"wrote {args.count} scenes to {out} ({counts['train']}/{counts['val']}/{counts['test']} train/val/test)")
    return EXIT_OK


def cmd_train_dpc(args) -> int:
    manifest = read_manifest(args.manifest)
    scenes = manifest.load_split("train", args.scale)
    if not scenes:
        raise ValueError("empty dataset")
    params = DefectParams(args.noise_sigma, args.blur_kernel, args.blur_sigma, args.texture_beta)
    data = make_dpc_dataset(scenes, args.patch, params, args.count, args.seed)
    model, acc = train_dpc(data, args.epochs, args.lr, seed=args.seed)
    save_model(args.out, model, {"kind": "dpc", "patch": args.patch, "widths": [c.kernel.shape[-1] for c in model.stage]})
    print(f"held-out accuracy {acc:.4f}; saved {args.out}")
    return EXIT_OK


def load_dpc(path) -> DefectClassifier:
    meta = load_meta(path)
    if meta.get("kind") != "dpc":
        raise CheckpointError(f"{path} is not a defect classifier checkpoint")
    return load_model(path, DefectClassifier(meta["patch"], tuple(meta["widths"])))


def load_ssdnet(path) -> tuple[SSDNet, dict]:
    meta = load_meta(path)
    if "model" not in meta:
        raise CheckpointError(f"{path} is not a super-resolution checkpoint")
    model = SSDNet(model_config_from_dict(meta["model"]))
    return load_model(path, model), meta


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(args) -> int:
    from .plotting import plot_loss_curves
    from .train import train

    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = parse_overrides(cfg, _overrides(args.set))
    if not cfg.data:
        raise ConfigError("config key 'data' (manifest path) is required")
    manifest = read_manifest(cfg.data)
    train_scenes = manifest.load_split("train", cfg.scale)
    val_scenes = manifest.load_split("val", cfg.scale)
    dpc = None
    if cfg.scr and cfg.alpha3 > 0:
        if not cfg.dpc or not Path(cfg.dpc).exists():
            raise ConfigError("refinement is enabled but the DPC checkpoint is missing (set 'dpc' or scr = false)")
        dpc = load_dpc(cfg.dpc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(dump_config(cfg))
    result = train(cfg, train_scenes, val_scenes, dpc, out)
    plot_loss_curves(result.history, out / "loss.png")
    print(f"trained {cfg.epochs} epochs in {result.seconds:.1f}s; best val RMSE {result.best_rmse:.5g} "
          f"at epoch {result.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plotting import plot_rmse
    from .train import evaluate

    model, meta = load_ssdnet(args.ckpt)
    if "scale" in meta and meta["scale"] != args.scale:
        raise ValueError(f"scale {args.scale} does not match checkpoint scale {meta['scale']}")
    scenes = read_manifest(args.manifest).load_split(args.split, args.scale)
    if not scenes:
        raise ValueError(f"empty split {args.split!r}")
    rows = evaluate(model, scenes)
    unit = scenes[0].depth_hr.unit
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "model_rmse", "bicubic_rmse"])
        for r in rows:
            w.writerow([r.id, f"{r.model:.8g}", f"{r.bicubic:.8g}"])
        mean_m, mean_b = np.mean([r.model for r in rows]), np.mean([r.bicubic for r in rows])
        w.writerow(["mean", f"{mean_m:.8g}", f"{mean_b:.8g}"])
    for r in rows:
        print(f"{r.id}\t{r.model:.5f}\t{r.bicubic:.5f}")
    print(f"mean\t{mean_m:.5f}\t{mean_b:.5f}\t({unit}; model vs bicubic)")
    plot_rmse([r.id for r in rows], [r.model for r in rows], [r.bicubic for r in rows],
              out.with_suffix(".png"), unit)
    return EXIT_OK


def cmd_super_resolve(args) -> int:
    model, meta = load_ssdnet(args.ckpt)
    rgb = read_ppm(args.rgb)
    lr = read_pgm(args.depth_lr)
    scale = rgb.shape[0] // lr.shape[0]
    if rgb.shape[:2] != (lr.shape[0] * scale, lr.shape[1] * scale):
        raise ValueError(f"rgb {rgb.shape[:2]} is not an integer multiple of depth {lr.shape}")
    pred = np.clip(model.super_resolve(lr.values, rgb.values, scale), 0.0, 1.0)
    write_pgm(args.out, DepthMap(pred, lr.scale, lr.unit))
    print(f"wrote {pred.shape[0]}x{pred.shape[1]} depth to {args.out}")
    return EXIT_OK


def error_map(pred: DepthMap, gt: DepthMap) -> DepthMap:
    """|pred - gt| stretched to the full 16-bit range; ``scale`` converts counts
    back to native error units."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    err = np.abs(pred.native() - gt.native())
    peak = float(err.max())
    if peak == 0:
        return DepthMap(np.zeros_like(err), 1.0, gt.unit)
    return DepthMap(err / peak, peak / 65535, gt.unit)


def cmd_viz(args) -> int:
    from .plotting import plot_error_map

    emap = error_map(read_pgm(args.pred), read_pgm(args.gt))
    write_pgm(args.out, emap)
    plot_error_map(emap.native(), Path(args.out).with_suffix(".png"), unit=emap.unit)
    print(f"max |error| {emap.native().max():.6g} {emap.unit}; wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suites

    results = run_suites(args.suite, args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        note = f"  {r.report.message}" if r.report.message else ""
        print(f"{r.name:<{width}}  max_rel_err={r.report.max_error:.3e}  tol={r.report.tol:.0e}  {status}{note}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssdnet", description="Guided depth super-resolution toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write synthetic RGB-D scenes and a manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--shapes", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-dpc", help="train the defect patch classifier")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--patch", type=int, default=32)
    s.add_argument("--count", type=int, default=800)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--lr", type=float, default=3e-3)
    s.add_argument("--noise-sigma", type=float, default=0.05)
    s.add_argument("--blur-kernel", type=int, default=7)
    s.add_argument("--blur-sigma", type=float, default=2.0)
    s.add_argument("--texture-beta", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_dpc)

    s = sub.add_parser("train", help="train the super-resolution network")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="RMSE of a checkpoint and the bicubic baseline")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--out", default="eval.csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("super-resolve", help="upsample one LR depth map guided by RGB")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--rgb", required=True)
    s.add_argument("--depth-lr", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_super_resolve)

    s = sub.add_parser("viz", help="write an absolute error map")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viz)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites (64-bit)")
    s.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, PnmError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
