"""Block-structured generators, discriminators, miners and feature extractors.

A "layer" in the freezing sense is a :class:`Block`: one conv or dense map,
an optional scale/shift normalisation and an activation. Block 0 sits nearest
the input. The discriminator's last block is its head (scalar or projection),
so ``freeze_prefix(D, len(D.blocks))`` freezes every discriminator parameter.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, UsageError
from .rng import Rng
from .tensor import Parameter, Tensor

GROUPS = frozenset({"weight", "bias", "norm_scale", "norm_shift", "embedding"})
KINDS = ("generator", "discriminator", "miner", "feature_extractor")
EXTRACTOR_GAIN = 10.0


@dataclass
class ModelConfig:
    latent_dim: int = 32
    image_size: int = 16
    channels: int = 3
    g_blocks: int = 4
    d_blocks: int = 4  # trunk blocks; the discriminator adds one head block
    g_width: int = 32
    d_width: int = 16
    d_features: int = 64
    conditional: bool = False
    n_classes: int = 1
    embed_dim: int = 8
    feature_dim: int = 32
    miner_hidden: int = 64
    slope: float = 0.2
    seed: int = 0

    def validate(self) -> "ModelConfig":
        for name in ("latent_dim", "image_size", "channels", "g_blocks", "d_blocks",
                     "g_width", "d_width", "d_features", "n_classes", "embed_dim",
                     "feature_dim", "miner_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        n_up = _upsamples(self.image_size)
        if self.g_blocks < n_up + 2:
            raise ConfigError(
                f"image_size {self.image_size} needs g_blocks >= {n_up + 2}, got {self.g_blocks}"
            )
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError(f"slope must lie in [0, 1), got {self.slope}")
        return self


def _upsamples(image_size: int) -> int:
    if image_size < 4 or image_size & (image_size - 1):
        raise ConfigError(f"image_size must be a power of two >= 4, got {image_size}")
    return int(math.log2(image_size // 4))


def _activate(x: Tensor, act: str | None, slope: float) -> Tensor:
    if act is None:
        return x
    if act == "lrelu":
        return T.leaky_relu(x, slope)
    if act == "relu":
        return T.relu(x)
    if act == "tanh":
        return T.tanh(x)
    raise ConfigError(f"unknown activation {act!r}")


class Block:
    """One freezable unit. Subclasses register parameters and implement ``forward``."""

    def __init__(self, index: int, act: str | None = None, slope: float = 0.2):
        self.index = index
        self.act = act
        self.slope = slope
        self.params: dict[str, Parameter] = {}

    def _param(self, rng: Rng, local: str, group: str, shape, std: float | None = None, fill=0.0):
        data = rng.normal(shape) * std if std is not None else np.full(shape, fill)
        p = Parameter(data, f"b{self.index}.{local}", group)
        self.params[local] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def forward(self, x: Tensor, y=None) -> Tensor:
        raise NotImplementedError


class DenseBlock(Block):
    def __init__(self, index, rng, n_in, n_out, *, act="lrelu", slope=0.2, norm=False,
                 out_shape=None, flatten=False, n_classes=None, embed_dim=0):
        super().__init__(index, act, slope)
        self.out_shape = out_shape
        self.flatten = flatten
        self.norm = norm
        self.embedded = n_classes is not None
        fan_in = n_in + (embed_dim if self.embedded else 0)
        if self.embedded:
            self._param(rng, "embed", "embedding", (n_classes, embed_dim), std=1.0)
        self.weight = self._param(rng, "weight", "weight", (fan_in, n_out), std=1.0 / math.sqrt(fan_in))
        self.bias = self._param(rng, "bias", "bias", (n_out,))
        if norm:
            if out_shape is None:
                raise ConfigError("dense normalisation needs a (C, H, W) output shape")
            self._param(rng, "norm_scale", "norm_scale", (out_shape[0],), fill=1.0)
            self._param(rng, "norm_shift", "norm_shift", (out_shape[0],))

    def forward(self, x, y=None):
        if self.flatten:
            x = x.reshape(x.shape[0], -1)
        if self.embedded:
            x = T.concat([x, T.take_rows(self.params["embed"], y)], axis=1)
        h = x @ self.weight + self.bias
        if self.out_shape is not None:
            h = h.reshape((h.shape[0],) + tuple(self.out_shape))
        if self.norm:
            h = T.scale_shift_norm(h, self.params["norm_scale"], self.params["norm_shift"])
        return _activate(h, self.act, self.slope)


class ConvBlock(Block):
    def __init__(self, index, rng, c_in, c_out, *, stride=1, upsample=False, norm=False,
                 act="lrelu", slope=0.2, kernel=3):
        super().__init__(index, act, slope)
        self.stride = stride
        self.upsample = upsample
        self.padding = kernel // 2
        self.norm = norm
        fan_in = c_in * kernel * kernel
        self.weight = self._param(rng, "weight", "weight", (c_out, c_in, kernel, kernel),
                                  std=1.0 / math.sqrt(fan_in))
        self.bias = self._param(rng, "bias", "bias", (c_out,))
        if norm:
            self._param(rng, "norm_scale", "norm_scale", (c_out,), fill=1.0)
            self._param(rng, "norm_shift", "norm_shift", (c_out,))

    def forward(self, x, y=None):
        h = T.conv2d(x, self.weight, self.stride, self.padding)
        h = h + self.bias.reshape(1, -1, 1, 1)
        if self.norm:
            h = T.scale_shift_norm(h, self.params["norm_scale"], self.params["norm_shift"])
        h = _activate(h, self.act, self.slope)
        # upsampling last keeps the conv at the lower resolution
        return T.upsample2x(h) if self.upsample else h


class HeadBlock(Block):
    """Scalar logit ``phi·psi + b``, plus ``e_y·phi`` when conditional (projection)."""

    def __init__(self, index, rng, n_in, *, n_classes=None):
        super().__init__(index, None)
        self.conditional = n_classes is not None
        std = 1.0 / math.sqrt(n_in)
        self.weight = self._param(rng, "weight", "weight", (n_in, 1), std=std)
        self.bias = self._param(rng, "bias", "bias", (1,))
        if self.conditional:
            self._param(rng, "embed", "embedding", (n_classes, n_in), std=std)

    def forward(self, phi, y=None):
        out = (phi @ self.weight + self.bias).reshape(phi.shape[0])
        if self.conditional:
            proj = (T.take_rows(self.params["embed"], y) * phi).sum(axis=1)
            out = out + proj
        return out


class Network:
    def __init__(self, kind: str, blocks: list[Block], cfg: ModelConfig, *, conditional=False,
                 in_shape=None):
        if kind not in KINDS:
            raise ConfigError(f"unknown network kind {kind!r}")
        self.kind = kind
        self.blocks = blocks
        self.cfg = cfg
        self.conditional = conditional
        self.n_classes = cfg.n_classes if conditional else None
        self.in_shape = in_shape
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("parameter names must be unique")

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def _check_input(self, x, y):
        x = T.as_tensor(x)
        if self.in_shape is not None and tuple(x.shape[1:]) != tuple(self.in_shape):
            raise UsageError(f"{self.kind} expects input (N, {self.in_shape}), got {x.shape}")
        if y is not None and not self.conditional:
            raise UsageError(f"class labels given to an unconditional {self.kind}")
        if y is None and self.conditional:
            raise UsageError(f"conditional {self.kind} needs class labels")
        if y is not None:
            y = np.asarray(y, dtype=np.int64).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise UsageError(f"{y.shape[0]} labels for a batch of {x.shape[0]}")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise UsageError(f"class label out of range [0, {self.n_classes})")
        return x, y

    def forward_with_taps(self, x, y=None):
        """Return ``(output, taps)`` where ``taps[i]`` is block i's activated output."""
        h, y = self._check_input(x, y)
        taps = []
        for block in self.blocks:
            h = block.forward(h, y)
            taps.append(h)
        return h, taps

    def forward(self, x, y=None):
        return self.forward_with_taps(x, y)[0]

    __call__ = forward

    def features(self, x, block: int, y=None) -> Tensor:
        """``taps[block]`` without running the blocks above it."""
        if not 0 <= block < len(self.blocks):
            raise ConfigError(f"block {block} outside [0, {len(self.blocks)})")
        h, y = self._check_input(x, y)
        for b in self.blocks[: block + 1]:
            h = b.forward(h, y)
        return h

    def __repr__(self):
        return f"Network({self.kind}, blocks={len(self.blocks)}, params={len(self.parameters())})"


def _rng(cfg: ModelConfig, seed, salt: int) -> Rng:
    return Rng.stream(cfg.seed if seed is None else seed, "init", salt)


def build_generator(cfg: ModelConfig, seed: int | None = None) -> Network:
    cfg.validate()
    rng = _rng(cfg, seed, 1)
    n_up = _upsamples(cfg.image_size)
    width = cfg.g_width
    blocks: list[Block] = [
        DenseBlock(0, rng, cfg.latent_dim, width * 16, norm=True, out_shape=(width, 4, 4),
                   slope=cfg.slope, n_classes=cfg.n_classes if cfg.conditional else None,
                   embed_dim=cfg.embed_dim)
    ]
    for i in range(1, cfg.g_blocks - 1):
        up = i <= n_up
        c_out = max(width // 2, 8) if up else width
        blocks.append(ConvBlock(i, rng, width, c_out, upsample=up, norm=True, slope=cfg.slope))
        width = c_out
    blocks.append(ConvBlock(cfg.g_blocks - 1, rng, width, cfg.channels, act="tanh"))
    return Network("generator", blocks, cfg, conditional=cfg.conditional,
                   in_shape=(cfg.latent_dim,))


def _trunk(cfg: ModelConfig, rng: Rng, n_out: int, last_act: str | None):
    blocks: list[Block] = []
    size, c = cfg.image_size, cfg.channels
    width = cfg.d_width
    for i in range(cfg.d_blocks - 1):
        stride = 2 if size >= 4 else 1
        blocks.append(ConvBlock(i, rng, c, width, stride=stride, slope=cfg.slope))
        c = width
        if stride == 2:
            size //= 2
            width = min(width * 2, 256)
    blocks.append(DenseBlock(cfg.d_blocks - 1, rng, c * size * size, n_out, act=last_act,
                             slope=cfg.slope, flatten=True))
    return blocks


def build_discriminator(cfg: ModelConfig, seed: int | None = None) -> Network:
    cfg.validate()
    rng = _rng(cfg, seed, 2)
    blocks = _trunk(cfg, rng, cfg.d_features, "lrelu")
    blocks.append(HeadBlock(cfg.d_blocks, rng, cfg.d_features,
                            n_classes=cfg.n_classes if cfg.conditional else None))
    return Network("discriminator", blocks, cfg, conditional=cfg.conditional,
                   in_shape=(cfg.channels, cfg.image_size, cfg.image_size))


def build_feature_extractor(cfg: ModelConfig, seed: int | None = None) -> Network:
    """Seeded random conv trunk ending in a linear ``feature_dim`` projection; fully frozen."""
    cfg.validate()
    rng = _rng(cfg, seed, 3)
    blocks = _trunk(cfg, rng, cfg.feature_dim, None)
    # random trunks shrink activations; rescale so desk-FID lands on a readable scale
    blocks[-1].weight.data = blocks[-1].weight.data * EXTRACTOR_GAIN
    net = Network("feature_extractor", blocks, cfg,
                  in_shape=(cfg.channels, cfg.image_size, cfg.image_size))
    for p in net.parameters():
        p.trainable = False
    return net


def build_miner(cfg: ModelConfig, seed: int | None = None) -> Network:
    """latent -> hidden (ReLU) -> latent."""
    cfg.validate()
    rng = _rng(cfg, seed, 4)
    blocks = [
        DenseBlock(0, rng, cfg.latent_dim, cfg.miner_hidden, act="relu"),
        DenseBlock(1, rng, cfg.miner_hidden, cfg.latent_dim, act=None),
    ]
    return Network("miner", blocks, cfg, in_shape=(cfg.latent_dim,))


BUILDERS = {
    "generator": build_generator,
    "discriminator": build_discriminator,
    "miner": build_miner,
    "feature_extractor": build_feature_extractor,
}


def build(kind: str, cfg: ModelConfig, seed: int | None = None) -> Network:
    if kind not in BUILDERS:
        raise ConfigError(f"unknown network kind {kind!r}")
    return BUILDERS[kind](cfg, seed)


def freeze_prefix(net: Network, k: int) -> None:
    """Mark every parameter of blocks ``0..k-1`` non-trainable. Never unfreezes."""
    if not 0 <= k <= len(net.blocks):
        raise ConfigError(f"freeze depth {k} outside [0, {len(net.blocks)}]")
    for block in net.blocks[:k]:
        for p in block.parameters():
            p.trainable = False


def set_group_trainable(net: Network, groups) -> None:
    groups = set(groups)
    unknown = groups - GROUPS
    if unknown:
        raise ConfigError(f"unknown parameter group(s): {sorted(unknown)}")
    for p in net.parameters():
        p.trainable = p.group in groups


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(values: dict) -> ModelConfig:
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown model config key {key!r}")
        kwargs[key] = parse_value(fields[key].type, raw)
    return ModelConfig(**kwargs)


def parse_value(type_name, raw):
    if not isinstance(raw, str):
        return raw
    tname = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if tname == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if tname == "int":
            return int(raw)
        if tname == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {tname}") from None
    return raw
