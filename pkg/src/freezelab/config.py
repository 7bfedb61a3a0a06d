"""Flat ``key = value`` run configuration shared by every CLI command.

Blank lines and ``#`` comments are ignored; unknown or repeated keys are
errors. Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .data import DatasetSpec
from .errors import ConfigError
from .nn import ModelConfig, parse_value
from .strategies import GLO, L2SP, FeatDistill, FreezeD, FullFineTune, MineGAN, ScaleShift
from .trainer import TrainConfig

SEED_ENV = "FREEZELAB_SEED"
PATH_KEYS = ("out", "source_g", "source_d", "source_data", "target_data", "grid_checkpoint", "fid_a", "fid_b")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    # model
    latent_dim: int = 32
    image_size: int = 16
    g_blocks: int = 4
    d_blocks: int = 4
    g_width: int = 32
    d_width: int = 16
    d_features: int = 64
    conditional: bool = False
    embed_dim: int = 8
    feature_dim: int = 32
    miner_hidden: int = 64
    slope: float = 0.2
    # optimisation and evaluation
    iterations: int = 3000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 100
    fid_samples: int = 256
    loss: str = "logistic"
    # data
    source_classes: int = 5
    source_per_class: int = 1000
    target_classes: int = 1
    target_per_class: int = 100
    shift: float = 0.5
    source_data: str = ""  # empty: render from the class/shift keys
    target_data: str = ""
    # transfer
    source_g: str = "source/source_G.frzd"
    source_d: str = "source/source_D.frzd"
    strategy: str = "freezed"
    freeze_depth: int = 4
    l2sp_lambda: float = 1.0
    l2sp_apply: str = "GD"
    fd_layer: int = 4
    fd_weight: float = 1.0
    perceptual_weight: float = 1.0
    latent_lr: float = 0.0  # 0: ten times lr
    # ablate
    depths: str = "1,2,3,4"
    # grid
    grid_rows: int = 4
    grid_cols: int = 4
    grid_seed: int = 0
    grid_checkpoint: str = ""
    # fid
    fid_a: str = ""
    fid_b: str = ""
    extractor_seed: int = 1234

    base_dir: str = dataclasses.field(default=".", repr=False, compare=False)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_dim=self.latent_dim, image_size=self.image_size, g_blocks=self.g_blocks,
            d_blocks=self.d_blocks, g_width=self.g_width, d_width=self.d_width,
            d_features=self.d_features, conditional=self.conditional,
            n_classes=self.source_classes if self.conditional else 1,
            embed_dim=self.embed_dim, feature_dim=self.feature_dim,
            miner_hidden=self.miner_hidden, slope=self.slope, seed=self.seed,
        ).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1,
            beta2=self.beta2, eps=self.eps, eval_every=self.eval_every,
            fid_samples=self.fid_samples, loss=self.loss, seed=self.seed,
        ).validate()

    def source_spec(self) -> DatasetSpec:
        return DatasetSpec(n_classes=self.source_classes, image_size=self.image_size).validate()

    def target_spec(self) -> DatasetSpec:
        return DatasetSpec(n_classes=self.target_classes, shift=self.shift,
                           image_size=self.image_size).validate()

    def depth_list(self) -> list[int]:
        return parse_depths(self.depths)

    def path(self, key: str) -> Path:
        raw = getattr(self, key)
        if not raw:
            raise ConfigError(f"config key {key!r} is empty")
        p = Path(raw)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _fields():
    return [f for f in dataclasses.fields(RunConfig) if f.name != "base_dir"]


def parse_config(text: str, base_dir=".") -> RunConfig:
    known = {f.name: f for f in _fields()}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        values[key] = parse_value(known[key].type, raw)
    return RunConfig(**values, base_dir=str(base_dir))


def load_config(path, environ=None) -> RunConfig:
    """Read a config file; ``FREEZELAB_SEED`` in ``environ`` overrides ``seed``."""
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
    return apply_env(cfg, os.environ if environ is None else environ)


def apply_env(cfg: RunConfig, environ) -> RunConfig:
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        return cfg.replace(seed=int(raw))
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_text(cfg: RunConfig) -> str:
    """Every key with its effective value; parses back to an equal config."""
    lines = ["# effective freezelab config"]
    lines += [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in _fields()]
    return "\n".join(lines) + "\n"


def parse_depths(text: str) -> list[int]:
    try:
        depths = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"depths must be comma-separated integers, got {text!r}") from None
    if not depths:
        raise ConfigError("depth list is empty")
    if len(set(depths)) != len(depths):
        raise ConfigError(f"repeated depth in {text!r}")
    return depths


STRATEGY_NAMES = (
    "finetune", "finetune_glo", "glo", "scaleshift", "scaleshift_glo", "minegan",
    "minegan_glo", "l2sp", "l2sp_g", "l2sp_d", "l2sp_gd", "freezed", "fd",
)


def make_strategy(name: str, cfg: RunConfig):
    """Strategy object for a command-line name, filled in from ``cfg``.

    The ``_glo`` suffix selects the GLO-loss variant of a strategy;
    ``finetune_glo`` and ``glo`` are the same thing.
    """
    if name == "finetune":
        return FullFineTune()
    if name in ("finetune_glo", "glo"):
        return GLO(perceptual_weight=cfg.perceptual_weight, latent_lr=cfg.latent_lr or None)
    if name in ("scaleshift", "scaleshift_glo"):
        return ScaleShift(loss_mode="glo" if name.endswith("_glo") else "gan")
    if name in ("minegan", "minegan_glo"):
        return MineGAN(hidden=cfg.miner_hidden, loss_mode="glo" if name.endswith("_glo") else "gan")
    if name.startswith("l2sp"):
        apply = cfg.l2sp_apply if name == "l2sp" else name.split("_", 1)[1]
        apply = apply.upper()
        if not apply or set(apply) - {"G", "D"}:
            raise ConfigError(f"l2sp_apply must be G, D or GD, got {apply!r}")
        return L2SP(apply_to=frozenset(apply), lam=cfg.l2sp_lambda)
    if name == "freezed":
        return FreezeD(k=cfg.freeze_depth)
    if name == "fd":
        return FeatDistill(layer=cfg.fd_layer, weight=cfg.fd_weight)
    raise ConfigError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGY_NAMES)}")
