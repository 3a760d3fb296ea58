"""Image codecs, resampling, synthetic scenes, manifests and the RMSE metric."""

import numpy as np

from .manifest import DatasetManifest, Record, assign_splits, read_manifest, split_counts, write_manifest
from .pnm import DepthMap, PnmError, RgbImage, read_pgm, read_ppm, write_pgm, write_ppm
from .resample import bicubic_resample, cubic_kernel, resample_matrix
from .scenes import ScenePair, downsample_depth, edge_map, edge_overlap_ratio, make_pair, synth_scene


def rmse(pred, gt) -> float:
    """Root-mean-square error in the ground truth's native units.

    ``pred`` may be a :class:`DepthMap` or a normalized array on the same grid.
    """
    g = gt.native() if isinstance(gt, DepthMap) else np.asarray(gt, dtype=np.float64)
    if isinstance(pred, DepthMap):
        p = pred.native()
    elif isinstance(gt, DepthMap):
        p = np.asarray(pred, dtype=np.float64) * 65535 * gt.scale
    else:
        p = np.asarray(pred, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"rmse: shape mismatch {p.shape} vs {g.shape}")
    return float(np.sqrt(np.mean((p - g) ** 2)))


__all__ = [
    "DatasetManifest", "Record", "assign_splits", "read_manifest", "split_counts", "write_manifest",
    "DepthMap", "PnmError", "RgbImage", "read_pgm", "read_ppm", "write_pgm", "write_ppm",
    "bicubic_resample", "cubic_kernel", "resample_matrix",
    "ScenePair", "downsample_depth", "edge_map", "edge_overlap_ratio", "make_pair", "synth_scene",
    "rmse",
]
