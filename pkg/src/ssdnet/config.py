"""Run configuration read from ``key = value`` text files with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .losses import DEC_MODES, DISTANCES, LossWeights
from .network import ModelConfig
from .refine import DefectParams
from .sphere import SphereConfig

SCALES = (4, 8, 16)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    P: int = 4
    C: int = 64
    heads: int = 4
    expansion: float = 2.0
    decoder_blocks: int = 0  # 0 means max(1, P // 2)
    residual_output: bool = True
    shared_encoder: bool = False
    sphere_roundtrip: bool = True
    # sphere
    radius: float = 1.0
    variant: str = "tangent_lift"
    reduction: str = "mean"
    prescale: bool = True
    # losses
    alpha1: float = 1e-2
    alpha2: float = 1e-3
    alpha3: float = 1e-2
    dec_mode: str = "consistent"
    dec_distance: str = "sphere"
    # refinement
    scr: bool = True
    scr_period: int = 10
    scr_lr: float = 1e-4
    patch: int = 32
    negatives: int = 8
    anchors: int = 0  # 0 means the batch size
    noise_sigma: float = 0.05
    blur_kernel: int = 7
    blur_sigma: float = 2.0
    texture_beta: float = 0.3
    # optimisation
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    cosine: bool = False
    batch: int = 8
    epochs: int = 100
    crop: int = 128
    scale: int = 4
    seed: int = 0
    # paths
    data: str = ""
    dpc: str = ""
    out: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("batch", "epochs", "scr_period", "patch", "negatives", "crop"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}")
        if self.crop % self.scale:
            raise ConfigError(f"crop {self.crop} must be a multiple of scale {self.scale}")
        if self.anchors < 0 or self.decoder_blocks < 0:
            raise ConfigError("anchors and decoder_blocks must be >= 0")
        if not (self.lr > 0 and self.scr_lr > 0):
            raise ConfigError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.dec_mode not in DEC_MODES:
            raise ConfigError(f"dec_mode must be one of {DEC_MODES}")
        if self.dec_distance not in DISTANCES:
            raise ConfigError(f"dec_distance must be one of {DISTANCES}")
        try:
            self.model_config()
            self.weights()
            self.defects()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sphere(self) -> SphereConfig:
        return SphereConfig(self.radius, self.variant, self.reduction, self.prescale)

    def model_config(self) -> ModelConfig:
        return ModelConfig(P=self.P, C=self.C, heads=self.heads, expansion=self.expansion,
                           residual_output=self.residual_output, sphere=self.sphere(),
                           decoder_blocks=self.decoder_blocks or None,
                           shared_encoder=self.shared_encoder, sphere_roundtrip=self.sphere_roundtrip)

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha1, self.alpha2, self.alpha3)

    def defects(self) -> DefectParams:
        return DefectParams(self.noise_sigma, self.blur_kernel, self.blur_sigma, self.texture_beta)

    @property
    def n_anchors(self) -> int:
        return self.anchors or self.batch

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return parse_overrides(self, kw)


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["sphere"] = SphereConfig(**d["sphere"])
    return ModelConfig(**d)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def _types() -> dict:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_overrides(base: RunConfig, values: dict) -> RunConfig:
    types = _types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = base.to_dict()
    merged.update({k: _coerce(k, types[k], v) for k, v in values.items()})
    return RunConfig(**merged)


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = value
    return parse_overrides(base or RunConfig(), values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    cfg = parse_text(Path(path).read_text())
    return parse_overrides(cfg, overrides) if overrides else cfg


def dump_config(cfg: RunConfig) -> str:
    def fmt(v):
        return str(v).lower() if isinstance(v, bool) else str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in cfg.to_dict().items())
