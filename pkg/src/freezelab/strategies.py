"""Transfer strategies: which parameters train, and which extra loss terms apply.

``prepare`` copies the source networks into a :class:`TrainState` and sets the
trainable masks for the chosen strategy; the trainer then asks the state for
its trainable parameters and loss terms.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .errors import AlignmentError, CheckpointMismatchError, ConfigError
from .nn import (
    Network,
    build_discriminator,
    build_miner,
    config_to_dict,
    freeze_prefix,
    set_group_trainable,
)
from .rng import Rng
from .tensor import Parameter, Tensor

LOSS_MODES = ("gan", "glo")
PERCEPTUAL_BLOCK = 2
PERCEPTUAL_SEED = 9173


@dataclass(frozen=True)
class FullFineTune:
    name = "finetune"
    loss_mode = "gan"


@dataclass(frozen=True)
class FreezeD:
    k: int = 4
    name = "freezed"
    loss_mode = "gan"


@dataclass(frozen=True)
class ScaleShift:
    loss_mode: str = "gan"
    name = "scaleshift"


@dataclass(frozen=True)
class GLO:
    """Fine-tuning under the GLO loss (generator plus one latent code per sample)."""

    perceptual_weight: float = 1.0
    latent_lr: float | None = None  # None: 10x the model learning rate
    name = "glo"
    loss_mode = "glo"


@dataclass(frozen=True)
class MineGAN:
    hidden: int = 64
    loss_mode: str = "gan"
    name = "minegan"


@dataclass(frozen=True)
class L2SP:
    apply_to: frozenset = frozenset({"G", "D"})
    lam: float = 1.0
    name = "l2sp"
    loss_mode = "gan"


@dataclass(frozen=True)
class FeatDistill:
    layer: int = 4
    weight: float = 1.0
    name = "fd"
    loss_mode = "gan"


STRATEGIES = (FullFineTune, FreezeD, ScaleShift, GLO, MineGAN, L2SP, FeatDistill)


def validate_strategy(strategy, d_blocks: int) -> None:
    """Range checks; ``d_blocks`` is the discriminator's block count (head included)."""
    if not isinstance(strategy, STRATEGIES):
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy.loss_mode not in LOSS_MODES:
        raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {strategy.loss_mode!r}")
    if isinstance(strategy, FreezeD) and not 0 <= strategy.k <= d_blocks:
        raise ConfigError(f"freeze depth {strategy.k} outside [0, {d_blocks}]")
    if isinstance(strategy, L2SP):
        if strategy.lam <= 0:
            raise ConfigError("L2-SP weight must be positive")
        if not strategy.apply_to or not set(strategy.apply_to) <= {"G", "D"}:
            raise ConfigError(f"L2-SP apply_to must be a non-empty subset of {{G, D}}")
    if isinstance(strategy, FeatDistill):
        if strategy.weight <= 0:
            raise ConfigError("distillation weight must be positive")
        if not 1 <= strategy.layer <= d_blocks:
            raise ConfigError(f"distillation layer {strategy.layer} outside [1, {d_blocks}]")
    if isinstance(strategy, GLO):
        if strategy.perceptual_weight < 0:
            raise ConfigError("perceptual weight must be non-negative")
        if strategy.latent_lr is not None and strategy.latent_lr <= 0:
            raise ConfigError("latent_lr must be positive")
    if isinstance(strategy, MineGAN) and strategy.hidden < 1:
        raise ConfigError("miner hidden width must be positive")


@dataclass
class TrainState:
    G: Network
    D: Network
    source_G: Network
    source_D: Network
    strategy: object
    miner: Network | None = None
    latents: Parameter | None = None
    perceptual: Network | None = None
    extra: dict = field(default_factory=dict)

    @property
    def loss_mode(self) -> str:
        return self.strategy.loss_mode

    def generate(self, z, y=None) -> Tensor:
        if self.miner is not None:
            z = self.miner(z)
        return self.G(z, y)


def _frozen_copy(net: Network) -> Network:
    snap = net.copy()
    for p in snap.parameters():
        p.trainable = False
    return snap


def _as_network(src) -> Network:
    return src if isinstance(src, Network) else load_checkpoint(src)


def _arch(cfg) -> dict:
    d = config_to_dict(cfg)
    d.pop("seed")
    d.pop("miner_hidden")
    return d


def prepare(strategy, source_G, source_D, dataset, seed: int = 0) -> TrainState:
    """Build target networks from the source checkpoints with the strategy's masks.

    ``source_G`` / ``source_D`` are networks or checkpoint paths; they are
    copied, never modified.
    """
    src_G, src_D = _as_network(source_G), _as_network(source_D)
    if src_G.kind != "generator" or src_D.kind != "discriminator":
        raise CheckpointMismatchError(
            f"expected generator and discriminator checkpoints, got {src_G.kind} and {src_D.kind}"
        )
    if _arch(src_G.cfg) != _arch(src_D.cfg):
        raise CheckpointMismatchError("generator and discriminator were built from different configs")
    cfg = src_G.cfg
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if tuple(dataset.images.shape[1:]) != want:
        raise CheckpointMismatchError(
            f"dataset images {dataset.images.shape[1:]} do not fit model input {want}"
        )
    if cfg.conditional and len(dataset) and dataset.labels.max() >= cfg.n_classes:
        raise CheckpointMismatchError("dataset has more classes than the conditional model")
    validate_strategy(strategy, len(src_D.blocks))

    G, D = src_G.copy(), src_D.copy()
    for p in G.parameters() + D.parameters():
        p.trainable = True
        p.zero_grad()
    state = TrainState(G, D, _frozen_copy(src_G), _frozen_copy(src_D), strategy)

    if isinstance(strategy, FreezeD):
        freeze_prefix(D, strategy.k)
    elif isinstance(strategy, ScaleShift):
        set_group_trainable(G, {"norm_scale", "norm_shift"})
    elif isinstance(strategy, MineGAN):
        set_group_trainable(G, set())
        mcfg = dataclasses.replace(cfg, miner_hidden=strategy.hidden)
        state.miner = build_miner(mcfg, seed=seed)

    if strategy.loss_mode == "glo":
        set_group_trainable(D, set())  # unused under the GLO loss
        table = Rng.stream(seed, "latent").normal((len(dataset), cfg.latent_dim))
        # MineGAN† trains only the miner; the table stays fixed
        state.latents = Parameter(table, "latents", "latent", trainable=not isinstance(strategy, MineGAN))
        state.perceptual = build_discriminator(cfg, seed=PERCEPTUAL_SEED)
        for p in state.perceptual.parameters():
            p.trainable = False
    return state


def trainable_parameters(state: TrainState) -> list[Parameter]:
    params = [p for p in state.G.parameters() + state.D.parameters() if p.trainable]
    if state.miner is not None:
        params += [p for p in state.miner.parameters() if p.trainable]
    if state.latents is not None and state.latents.trainable:
        params.append(state.latents)
    return params


def generator_side_parameters(state: TrainState) -> list[Parameter]:
    """Trainable parameters updated by the G-side step (latents excluded)."""
    params = [p for p in state.G.parameters() if p.trainable]
    if state.miner is not None:
        params += [p for p in state.miner.parameters() if p.trainable]
    return params


# ---------------------------------------------------------------- loss terms


def l2sp_penalty(target_params, source_params, lam: float) -> Tensor:
    """lam * sum_j ||theta_j - theta0_j||^2 over parameters aligned by name."""
    tgt = {p.name: p for p in target_params}
    src = {p.name: p for p in source_params}
    if set(tgt) != set(src):
        missing = sorted(set(tgt) ^ set(src))
        raise AlignmentError(f"L2-SP parameter names differ: {missing}")
    total = None
    for name in tgt:
        if tgt[name].shape != src[name].shape:
            raise AlignmentError(f"L2-SP shape mismatch for {name}: {tgt[name].shape} vs {src[name].shape}")
        term = T.square(tgt[name] - src[name].data).sum()
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total * lam


def fd_penalty(source_tap, target_tap, weight: float) -> Tensor:
    """weight * ||a_src - a_tgt||^2 / dim, averaged over the leading batch axis.

    The source tap is treated as a constant.
    """
    src = source_tap.data if isinstance(source_tap, Tensor) else np.asarray(source_tap)
    target_tap = T.as_tensor(target_tap)
    if src.shape != target_tap.shape:
        raise AlignmentError(f"tap shapes differ: {src.shape} vs {target_tap.shape}")
    n = target_tap.shape[0]
    dim = target_tap.size // n
    sq = T.square(target_tap - src).sum()
    return sq * (weight / (dim * n))


def perceptual_features(net: Network, images) -> Tensor:
    return net.features(images, PERCEPTUAL_BLOCK)


def glo_loss(G, latent_table, batch_indices, real_batch, perceptual_net=None,
             perceptual_weight: float = 1.0, miner=None, labels=None) -> Tensor:
    """Mean over the batch of L1(G(z_i), x_i) + w * ||f(G(z_i)) - f(x_i)||^2 / dim."""
    z = T.take_rows(latent_table, batch_indices)
    if miner is not None:
        z = miner(z)
    fake = G(z, labels)
    real = np.asarray(getattr(real_batch, "data", real_batch))
    if fake.shape != real.shape:
        raise AlignmentError(f"generated batch {fake.shape} vs real batch {real.shape}")
    loss = T.tabs(fake - real).mean()
    if perceptual_weight and perceptual_net is not None:
        with T.no_grad():
            f_real = perceptual_features(perceptual_net, real)
        f_fake = perceptual_features(perceptual_net, fake)
        loss = loss + fd_penalty(f_real, f_fake, perceptual_weight)
    return loss


def miner_forward(miner: Network, z) -> Tensor:
    return miner(z)
