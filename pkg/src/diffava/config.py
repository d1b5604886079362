"""Run configuration: one JSON document with a section per pipeline stage.

``desk`` is the default preset; ``paper-scale`` swaps in the published
hyperparameters (768-dim, 4 layers, 8 heads, Adam 1.5e-4, batch 128,
30 epochs, 1000 diffusion steps).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .alignment import AlignConfig
from .codec import CodecConfig
from .contrastive import ContrastiveConfig
from .diffusion import DenoiserConfig, build_schedule
from .errors import ConfigError
from .synthdata import DataConfig


@dataclass(frozen=True)
class EncoderSection:
    dim: int = 64
    hidden: int = 128
    seed: int = 11


@dataclass(frozen=True)
class AlignSection:
    depth: int = 4
    heads: int = 8
    ff_mult: int = 4
    fusion_hidden: int = 128
    positional_encoding: bool = True
    tau: float = 0.07
    contrast_target: str = "aligned_text"
    symmetric: bool = False
    lr: float = 3e-3
    batch: int = 32
    epochs: int = 12
    seed: int = 21


@dataclass(frozen=True)
class CodecSection:
    C: int = 8
    r: int = 2
    decoder_hidden: int = 32
    lr: float = 3e-3
    batch: int = 32
    epochs: int = 10
    seed: int = 31


@dataclass(frozen=True)
class DiffusionSection:
    N: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.1
    hidden: int = 512
    layers: int = 3
    time_dim: int = 32
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 30
    train_cond: str = "aligned_text"
    cond_mode: str = "sequence"
    loss_norm: str = "mse"
    cfg_guidance: bool = True
    cond_dropout: float = 0.1
    guidance_scale: float = 4.0
    seed: int = 41


@dataclass(frozen=True)
class EvalSection:
    classifier_epochs: int = 60
    classifier_lr: float = 1e-2
    onset_gap_min: float = 1.0
    seed: int = 51


@dataclass(frozen=True)
class DataSection:
    T: int = 10
    F: int = 64
    D_v: int = 32
    K: int = 8
    max_events: int = 2
    n_train: int = 4096
    n_val: int = 512
    n_test: int = 256
    world_seed: int = 1234
    train_seed: int = 1
    val_seed: int = 2
    test_seed: int = 3


TRAIN_CONDS = ("aligned_text", "raw_text", "audio_embedding")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    data: DataSection = field(default_factory=DataSection)
    encoders: EncoderSection = field(default_factory=EncoderSection)
    align: AlignSection = field(default_factory=AlignSection)
    codec: CodecSection = field(default_factory=CodecSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # --- derived module configs ---
    def data_config(self) -> DataConfig:
        d = self.data
        return DataConfig(T=d.T, F=d.F, D_v=d.D_v, K=d.K, max_events=d.max_events, world_seed=d.world_seed,
                          n_train=d.n_train, n_val=d.n_val, n_test=d.n_test)

    def align_config(self) -> AlignConfig:
        a = self.align
        return AlignConfig(dim=self.encoders.dim, depth=a.depth, heads=a.heads, ff_mult=a.ff_mult,
                           fusion_hidden=a.fusion_hidden, positional_encoding=a.positional_encoding, seed=a.seed)

    def contrastive_config(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.align.tau, self.align.contrast_target, self.align.symmetric)

    def codec_config(self) -> CodecConfig:
        c = self.codec
        return CodecConfig(C=c.C, r=c.r, T=self.data.T, F=self.data.F, decoder_hidden=c.decoder_hidden,
                           lr=c.lr, batch=c.batch, epochs=c.epochs, seed=c.seed)

    def cond_dim(self) -> int:
        d = self.encoders.dim
        return d * self.data.T if self.diffusion.cond_mode == "sequence" else d

    def denoiser_config(self) -> DenoiserConfig:
        s = self.diffusion
        return DenoiserConfig(latent_shape=self.codec_config().latent_shape, cond_dim=self.cond_dim(),
                              hidden=s.hidden, layers=s.layers, time_dim=s.time_dim, seed=s.seed)

    def schedule(self):
        s = self.diffusion
        return build_schedule(N=s.N, beta_min=s.beta_min, beta_max=s.beta_max)

    # --- validation / identity ---
    def validate(self) -> "RunConfig":
        """Build every derived config so cross-section inconsistencies surface before any work."""
        try:
            self.data_config()
            self.align_config()
            self.contrastive_config()
            self.codec_config()
            self.denoiser_config()
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = self.diffusion
        if d.train_cond not in TRAIN_CONDS:
            raise ConfigError(f"train_cond must be one of {TRAIN_CONDS}")
        if d.cond_mode not in ("sequence", "pooled"):
            raise ConfigError("cond_mode must be 'sequence' or 'pooled'")
        if d.loss_norm not in ("mse", "l2"):
            raise ConfigError("loss_norm must be 'mse' or 'l2'")
        if not 0 <= d.cond_dropout < 1:
            raise ConfigError("cond_dropout must lie in [0, 1)")
        if self.align.batch < 2:
            raise ConfigError("alignment batch must be >= 2")
        if self.data.n_train < 1:
            raise ConfigError("n_train must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "preset"}


def from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(_SECTIONS) - {"preset"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = preset(d.get("preset", "desk"))
    kwargs = {"preset": d.get("preset", base.preset)}
    for name in _SECTIONS:
        section = getattr(base, name)
        values = d.get(name, {})
        valid = {f.name for f in dataclasses.fields(section)}
        bad = set(values) - valid
        if bad:
            raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
        kwargs[name] = dataclasses.replace(section, **values)
    return RunConfig(**kwargs).validate()


def preset(name: str) -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper-scale":
        return RunConfig(
            preset="paper-scale",
            encoders=EncoderSection(dim=768, hidden=768),
            align=AlignSection(depth=4, heads=8, lr=1.5e-4, batch=128, epochs=30),
            diffusion=DiffusionSection(N=1000, beta_min=1e-4, beta_max=0.02, cfg_guidance=False),
        )
    raise ConfigError(f"unknown preset {name!r} (choose 'desk' or 'paper-scale')")


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    d = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        d[section][name] = _coerce(value)
    return from_dict(d)


def load_config(path=None, overrides=None, preset_name=None) -> RunConfig:
    if path is None:
        cfg = preset(preset_name or "desk")
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if preset_name:
            raw["preset"] = preset_name
        cfg = from_dict(raw)
    return apply_overrides(cfg, overrides).validate()


def save_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
