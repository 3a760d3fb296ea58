"""Binary netpbm codecs: 16-bit PGM (P5) for depth and 8-bit PPM (P6) for RGB.

Depth files carry a comment ``# scale=<float> unit=<str>`` giving the native
units per stored count.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEPTH_MAXVAL = 65535
RGB_MAXVAL = 255
DEFAULT_UNIT = "normalized"


class PnmError(ValueError):
    pass


@dataclass
class DepthMap:
    """Depth normalized to [0, 1] in memory; ``scale`` is native units per 16-bit count."""

    values: np.ndarray
    scale: float = 1.0
    unit: str = DEFAULT_UNIT

    @property
    def shape(self):
        return self.values.shape

    def counts(self) -> np.ndarray:
        return np.clip(np.rint(self.values * DEPTH_MAXVAL), 0, DEPTH_MAXVAL).astype(np.uint16)

    def native(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64) * DEPTH_MAXVAL * self.scale

    @classmethod
    def from_counts(cls, counts, scale=1.0, unit=DEFAULT_UNIT) -> "DepthMap":
        return cls(np.asarray(counts, dtype=np.float64) / DEPTH_MAXVAL, scale, unit)

    def quantized(self) -> "DepthMap":
        return DepthMap.from_counts(self.counts(), self.scale, self.unit)


@dataclass
class RgbImage:
    values: np.ndarray  # (H, W, 3) in [0, 1]

    @property
    def shape(self):
        return self.values.shape

    def counts(self) -> np.ndarray:
        return np.clip(np.rint(self.values * RGB_MAXVAL), 0, RGB_MAXVAL).astype(np.uint8)

    @classmethod
    def from_counts(cls, counts) -> "RgbImage":
        return cls(np.asarray(counts, dtype=np.float64) / RGB_MAXVAL)


def _header(magic: str, w: int, h: int, maxval: int, comments=()) -> bytes:
    lines = [magic, *(f"# {c}" for c in comments), f"{w} {h}", str(maxval)]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path, depth: DepthMap):
    counts = depth.counts()
    if counts.ndim != 2:
        raise PnmError(f"depth must be 2-D, got {counts.shape}")
    h, w = counts.shape
    head = _header("P5", w, h, DEPTH_MAXVAL, [f"scale={depth.scale!r} unit={depth.unit}"])
    Path(path).write_bytes(head + counts.astype(">u2").tobytes())


def write_ppm(path, rgb: RgbImage):
    counts = rgb.counts()
    if counts.ndim != 3 or counts.shape[2] != 3:
        raise PnmError(f"rgb must be HxWx3, got {counts.shape}")
    h, w, _ = counts.shape
    Path(path).write_bytes(_header("P6", w, h, RGB_MAXVAL) + counts.tobytes())


_TOKEN = re.compile(rb"\s*(#[^\n]*\n|\S+)")


def _parse(data: bytes):
    """Return (magic, width, height, maxval, comments, payload offset)."""
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PnmError("truncated header")
        tok = m.group(1)
        pos = m.end()
        if tok.startswith(b"#"):
            comments.append(tok[1:].strip().decode("utf-8", "replace"))
        else:
            tokens.append(tok)
    magic = tokens[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise PnmError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError("malformed header") from None
    if data[pos:pos + 1].isspace():
        pos += 1
    else:
        raise PnmError("missing whitespace after maxval")
    return magic, w, h, maxval, comments, pos


def read_pgm(path) -> DepthMap:
    data = Path(path).read_bytes()
    magic, w, h, maxval, comments, pos = _parse(data)
    if magic != "P5":
        raise PnmError(f"{path}: expected P5 depth map, got {magic}")
    if maxval != DEPTH_MAXVAL:
        raise PnmError(f"{path}: depth maps require maxval {DEPTH_MAXVAL}, got {maxval}")
    need = w * h * 2
    if len(data) - pos < need:
        raise PnmError(f"{path}: truncated payload ({len(data) - pos} of {need} bytes)")
    counts = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).reshape(h, w)
    scale, unit = None, DEFAULT_UNIT
    for c in comments:
        m = re.search(r"scale=(\S+)", c)
        if m:
            scale = float(m.group(1))
            u = re.search(r"unit=(\S+)", c)
            unit = u.group(1) if u else DEFAULT_UNIT
    if scale is None:
        log.warning("%s: no scale comment; assuming scale=1.0 unit=%s", path, DEFAULT_UNIT)
        scale = 1.0
    return DepthMap.from_counts(counts.astype(np.uint16), scale, unit)


def read_ppm(path) -> RgbImage:
    data = Path(path).read_bytes()
    magic, w, h, maxval, _, pos = _parse(data)
    if magic != "P6":
        raise PnmError(f"{path}: expected P6 RGB image, got {magic}")
    if maxval != RGB_MAXVAL:
        raise PnmError(f"{path}: RGB images require maxval {RGB_MAXVAL}, got {maxval}")
    need = w * h * 3
    if len(data) - pos < need:
        raise PnmError(f"{path}: truncated payload ({len(data) - pos} of {need} bytes)")
    counts = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return RgbImage.from_counts(counts)
