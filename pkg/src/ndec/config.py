"""Run configuration: sectioned key=value text, strict validation, stable hash.

Example::

    [data]
    n_classes = 20
    noise = 0.1

    [train]
    epochs = 30

Unknown sections or keys are rejected. The config hash is the SHA-256 of
the canonical text (sections and keys sorted, values normalised), so two
files that differ only in layout or comments hash identically.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .encoders import ENCODER_VARIANTS
from .signals import BAND_ORDER, REGION_ORDER


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    path: str = ""
    seed: int = 7
    n_classes: int = 20
    per_class: int = 10
    channels: int = 8
    samples: int = 64
    sample_rate: float = 250.0
    class_separation: float = 3.0
    noise: float = 0.1
    latent_dim: int = 16
    test_reps: int = 4
    image_size: int = 32
    montage: str = "none"


@dataclass(frozen=True)
class ModelConfig:
    d_embed: int = 1024
    conv_channels: int = 32
    kernel: int = 7
    encoder: str = "attn_conv"
    fusion_heads: int = 8
    ffn_mult: int = 4
    fusion_layers: int = 2
    trunk_blocks: int = 4


@dataclass(frozen=True)
class UMConfig:
    enabled: bool = True
    sigma0: float = 6.0
    c: float = 6.0
    z: float = 1.0
    gamma: float = 0.3
    r_centre: float = 1.0
    r_edge: float = 0.0
    lam: float = 3.0
    stub_seed: int = 0


@dataclass(frozen=True)
class LossSection:
    kind: str = "scm"
    tau: float = 0.07
    k: int = 10
    mask_mode: str = "literal"
    lambda_mse: float = 1.0
    lambda_cos: float = 0.5
    lambda_reg: float = 1e-4


@dataclass(frozen=True)
class FusionConfig:
    modality_mask: bool = True


@dataclass(frozen=True)
class STHConfig:
    dropout: bool = True
    inference: str = "all"


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 80
    text_epochs: int = 30
    fusion_epochs: int = 80
    sth_epochs: int = 80
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    schedule: str = "staged"
    val_size: int = 20


@dataclass(frozen=True)
class AblationConfig:
    region: str = "all"
    band: str = "all"


_SECTIONS = {
    "data": DataConfig, "model": ModelConfig, "um": UMConfig, "loss": LossSection,
    "fusion": FusionConfig, "sth": STHConfig, "train": TrainConfig, "ablation": AblationConfig,
}

_CHOICES = {
    ("data", "source"): ("synth", "path"),
    ("data", "montage"): ("none", "10-20"),
    ("model", "encoder"): tuple(ENCODER_VARIANTS),
    ("loss", "kind"): ("scm", "infonce"),
    ("loss", "mask_mode"): ("literal", "neginf"),
    ("sth", "inference"): ("all", "single"),
    ("train", "schedule"): ("staged", "interleaved"),
    ("ablation", "region"): REGION_ORDER,
    ("ablation", "band"): BAND_ORDER,
}

_POSITIVE = {
    ("data", "n_classes"), ("data", "per_class"), ("data", "channels"), ("data", "samples"),
    ("data", "sample_rate"), ("data", "latent_dim"), ("data", "test_reps"), ("data", "image_size"),
    ("model", "d_embed"), ("model", "conv_channels"), ("model", "kernel"), ("model", "fusion_heads"),
    ("model", "ffn_mult"), ("model", "fusion_layers"), ("model", "trunk_blocks"),
    ("loss", "tau"), ("loss", "k"), ("train", "batch_size"), ("train", "lr"),
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    um: UMConfig = field(default_factory=UMConfig)
    loss: LossSection = field(default_factory=LossSection)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sth: STHConfig = field(default_factory=STHConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        _validate(self)

    # -- text form ---------------------------------------------------------
    def canonical_text(self) -> str:
        lines = []
        for sec in sorted(_SECTIONS):
            lines.append(f"[{sec}]")
            obj = getattr(self, sec)
            for f in sorted(fields(obj), key=lambda f: f.name):
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def updated(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``updated(**{"train.seed": 3})``."""
        by_sec: dict = {}
        for key, value in changes.items():
            sec, _, name = key.partition(".")
            if sec not in _SECTIONS or name not in {f.name for f in fields(_SECTIONS[sec])}:
                raise ConfigError(f"unknown config key {key!r}")
            by_sec.setdefault(sec, {})[name] = value
        return dataclasses.replace(self, **{s: dataclasses.replace(getattr(self, s), **kv)
                                            for s, kv in by_sec.items()})


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


def _validate(cfg: RunConfig) -> None:
    for sec, cls in _SECTIONS.items():
        obj = getattr(cfg, sec)
        if not isinstance(obj, cls):
            raise ConfigError(f"section {sec} has the wrong type")
        for f in fields(obj):
            v = getattr(obj, f.name)
            typ = type(f.default)
            if typ is float and isinstance(v, int) and not isinstance(v, bool):
                object.__setattr__(obj, f.name, float(v))
                v = float(v)
            if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
                raise ConfigError(f"{sec}.{f.name} must be {typ.__name__}, got {v!r}")
            if (sec, f.name) in _CHOICES and v not in _CHOICES[(sec, f.name)]:
                raise ConfigError(f"{sec}.{f.name} must be one of {_CHOICES[(sec, f.name)]}")
            if (sec, f.name) in _POSITIVE and v <= 0:
                raise ConfigError(f"{sec}.{f.name} must be positive")
            if typ in (int, float) and v < 0:
                raise ConfigError(f"{sec}.{f.name} must be non-negative")
    if cfg.data.n_classes < 2:
        raise ConfigError("data.n_classes must be at least 2")
    if cfg.data.source == "path" and not cfg.data.path:
        raise ConfigError("data.path is required when data.source = path")
    if cfg.model.d_embed % cfg.model.fusion_heads:
        raise ConfigError("model.d_embed must be divisible by model.fusion_heads")
    if not 0 < cfg.um.gamma <= 1:
        raise ConfigError("um.gamma must lie in (0, 1]")
    if cfg.um.sigma0 <= 0 or cfg.um.z <= 0 or cfg.um.sigma0 - cfg.um.c < 0:
        raise ConfigError("um needs sigma0 > 0, z > 0 and sigma0 - c >= 0")
    if not 0 <= cfg.um.r_edge <= cfg.um.r_centre <= 1:
        raise ConfigError("um needs 0 <= r_edge <= r_centre <= 1")
    if not (0 < cfg.train.beta1 < 1 and 0 < cfg.train.beta2 < 1):
        raise ConfigError("train.beta1/beta2 must lie in (0, 1)")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    kwargs = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = _SECTIONS[sec]
        known = {f.name: f for f in fields(cls)}
        vals = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"unknown key {sec}.{key}")
            vals[key] = _parse(raw, type(known[key].default), f"{sec}.{key}")
        kwargs[sec] = cls(**vals)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
