"""Tab-separated dataset manifests: ``id<TAB>rgb-path<TAB>depth-path<TAB>split``."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pnm import read_pgm, read_ppm
from .scenes import ScenePair, make_pair

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Record:
    id: str
    rgb: str
    depth: str
    split: str


@dataclass
class DatasetManifest:
    root: Path
    records: list[Record] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")
        for r in self.records:
            if r.split not in SPLITS:
                raise ValueError(f"{r.id}: unknown split {r.split!r}")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def load(self, record: Record, scale: int) -> ScenePair:
        rgb = read_ppm(self.root / record.rgb)
        depth = read_pgm(self.root / record.depth)
        return make_pair(rgb, depth, scale, record.id)

    def load_split(self, name: str, scale: int) -> list[ScenePair]:
        return [self.load(r, scale) for r in self.split(name)]


def split_counts(n: int, fractions=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def assign_splits(ids: list[str], seed: int, fractions=(0.8, 0.1, 0.1)) -> dict[str, str]:
    counts = split_counts(len(ids), fractions)
    order = np.random.default_rng(seed).permutation(len(ids))
    labels = np.repeat(SPLITS, counts)
    return {ids[i]: str(labels[k]) for k, i in enumerate(order)}


def write_manifest(path, manifest: DatasetManifest):
    lines = [f"# seed={manifest.seed}"]
    lines += ["\t".join((r.id, r.rgb, r.depth, r.split)) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    records, seed = [], 0
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if "seed=" in line:
                seed = int(line.split("seed=")[1].split()[0])
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
        records.append(Record(*parts))
    return DatasetManifest(path.parent, records, seed)
