"""Adversarial / GLO training loop with a hand-written Adam and periodic desk-FID."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, sample_indices
from .errors import ConfigError, NumericalError
from .fid import GaussianStats, extract_features, fit_gaussian, frechet
from .nn import Network
from .rng import Rng
from .strategies import (
    GLO,
    FeatDistill,
    L2SP,
    TrainState,
    fd_penalty,
    generator_side_parameters,
    glo_loss,
    l2sp_penalty,
    trainable_parameters,
)
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 100
    fid_samples: int = 256
    loss: str = "logistic"
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.iterations < 1 or self.batch_size < 1 or self.fid_samples < 2:
            raise ConfigError("iterations, batch_size must be >= 1 and fid_samples >= 2")
        if self.eval_every < 1 or self.iterations // self.eval_every < 2:
            raise ConfigError(
                f"eval_every={self.eval_every} gives fewer than 2 evaluations in {self.iterations} iterations"
            )
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.loss not in ("logistic", "hinge"):
            raise ConfigError(f"loss must be 'logistic' or 'hinge', got {self.loss!r}")
        return self


# ---------------------------------------------------------------- losses


def d_loss(logits_real, logits_fake) -> Tensor:
    """mean softplus(-real) + mean softplus(fake)."""
    return T.softplus(-T.as_tensor(logits_real)).mean() + T.softplus(logits_fake).mean()


def g_loss(logits_fake) -> Tensor:
    """Non-saturating generator loss, mean softplus(-fake)."""
    return T.softplus(-T.as_tensor(logits_fake)).mean()


def d_loss_hinge(logits_real, logits_fake) -> Tensor:
    return T.relu(1.0 - T.as_tensor(logits_real)).mean() + T.relu(1.0 + T.as_tensor(logits_fake)).mean()


def g_loss_hinge(logits_fake) -> Tensor:
    return -(T.as_tensor(logits_fake).mean())


LOSSES = {"logistic": (d_loss, g_loss), "hinge": (d_loss_hinge, g_loss_hinge)}


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def has_moments(self, p: Parameter) -> bool:
        return id(p) in self.m


def adam_step(params, state: AdamState, lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam on the trainable entries of ``params``; clears their gradients."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p in params:
        if not p.trainable:
            continue
        key = id(p)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        g = p.grad
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * (g * g)
        state.m[key], state.v[key] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.zero_grad()


# ---------------------------------------------------------------- history


@dataclass
class HistoryRow:
    iteration: int
    d_loss: float
    g_loss: float
    fid: float


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, row: HistoryRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("history iterations must increase")
        self.rows.append(row)

    @property
    def best_fid(self) -> float:
        return min(r.fid for r in self.rows)

    @property
    def final_fid(self) -> float:
        return self.rows[-1].fid

    @property
    def fids(self) -> list:
        return [r.fid for r in self.rows]

    def to_csv(self) -> str:
        lines = ["iter,d_loss,g_loss,fid"]
        for r in self.rows:
            lines.append(f"{r.iteration},{r.d_loss:.10g},{r.g_loss:.10g},{r.fid:.10g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "History":
        lines = text.strip().splitlines()
        if not lines or lines[0] != "iter,d_loss,g_loss,fid":
            raise ValueError("not a history CSV")
        h = cls()
        for line in lines[1:]:
            it, dl, gl, f = line.split(",")
            h.append(HistoryRow(int(it), float(dl), float(gl), float(f)))
        return h


# ---------------------------------------------------------------- evaluation


@dataclass
class FidContext:
    """Frozen extractor plus the real-side statistics and a fixed latent set."""

    extractor: Network
    real_stats: GaussianStats
    latents: np.ndarray
    labels: np.ndarray | None = None

    @classmethod
    def build(cls, extractor: Network, real_images, n_samples: int, seed: int,
              latent_dim: int, n_classes: int | None = None) -> "FidContext":
        stats = fit_gaussian(extract_features(extractor, real_images))
        stats.sqrt_sigma()
        z = Rng.stream(seed, "eval").normal((n_samples, latent_dim))
        labels = None if n_classes is None else np.arange(n_samples) % n_classes
        return cls(extractor, stats, z, labels)

    def score(self, state: TrainState) -> float:
        return frechet(self.real_stats, self.generated_stats(state))

    def generated_stats(self, state: TrainState) -> GaussianStats:
        with T.no_grad():
            images = generate_images(state, self.latents, self.labels)
        return fit_gaussian(extract_features(self.extractor, images))


def generate_images(state: TrainState, z, labels=None, chunk: int = 256) -> np.ndarray:
    out = []
    with T.no_grad():
        for s in range(0, len(z), chunk):
            y = None if labels is None else labels[s:s + chunk]
            out.append(state.generate(z[s:s + chunk], y).data)
    return np.concatenate(out, axis=0)


def frozen_checksum(state: TrainState) -> str:
    """Digest of every parameter the strategy leaves untouched."""
    h = hashlib.sha256()
    nets = [state.G, state.D] + ([state.miner] if state.miner is not None else [])
    for net in nets:
        for p in net.parameters():
            if not p.trainable:
                h.update(p.name.encode())
                h.update(p.data.tobytes())
    if state.latents is not None and not state.latents.trainable:
        h.update(state.latents.data.tobytes())
    return h.hexdigest()


class FreezeViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- loop


def _check(value: float, iteration: int, term: str) -> float:
    if not math.isfinite(value):
        raise NumericalError(iteration, term, value)
    return value


def train(state: TrainState, dataset: Dataset, cfg: TrainConfig, fid_ctx: FidContext,
          callback=None) -> History:
    """Run ``cfg.iterations`` steps; evaluate desk-FID every ``cfg.eval_every``.

    GAN-mode strategies do one D update (when D has trainable parameters) and
    one G-side update per iteration. GLO-mode strategies do one supervised
    update of the generator side and latent codes.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("training set is empty")
    strategy = state.strategy
    d_fn, g_fn = LOSSES[cfg.loss]
    noise = Rng.stream(cfg.seed, "noise")
    data_rng = Rng.stream(cfg.seed, "data")
    G, D = state.G, state.D
    latent_dim = G.cfg.latent_dim
    conditional = G.conditional
    n_cls = int(dataset.labels.max()) + 1 if conditional else None
    images, labels = dataset.images, dataset.labels
    bsz = cfg.batch_size

    d_params = [p for p in D.parameters() if p.trainable]
    g_params = generator_side_parameters(state)
    opt_d, opt_g, opt_z = AdamState(), AdamState(), AdamState()
    latent_lr = cfg.lr * 10.0
    if isinstance(strategy, GLO) and strategy.latent_lr is not None:
        latent_lr = strategy.latent_lr
    pw = strategy.perceptual_weight if isinstance(strategy, GLO) else 1.0
    l2sp_G = isinstance(strategy, L2SP) and "G" in strategy.apply_to
    l2sp_D = isinstance(strategy, L2SP) and "D" in strategy.apply_to
    fd_block = strategy.layer - 1 if isinstance(strategy, FeatDistill) else None

    checksum = frozen_checksum(state)
    history = History()
    d_sum = g_sum = 0.0
    n_sum = 0

    for it in range(1, cfg.iterations + 1):
        if state.loss_mode == "glo":
            idx = sample_indices(len(dataset), bsz, data_rng)
            y = labels[idx] if conditional else None
            loss = glo_loss(G, state.latents, idx, images[idx], state.perceptual, pw,
                            miner=state.miner, labels=y)
            gl = _check(loss.item(), it, "glo_loss")
            T.backward(loss)
            adam_step(g_params, opt_g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            if state.latents.trainable:
                adam_step([state.latents], opt_z, latent_lr, cfg.beta1, cfg.beta2, cfg.eps)
            dl = 0.0
        else:
            dl = 0.0
            if d_params:
                idx = sample_indices(len(dataset), bsz, data_rng)
                x_real = images[idx]
                y_real = labels[idx] if conditional else None
                z = noise.normal((bsz, latent_dim))
                y_fake = noise.integers(n_cls, (bsz,)) if conditional else None
                with T.no_grad():
                    x_fake = state.generate(z, y_fake).data
                x_all = np.concatenate([x_real, x_fake])
                y_all = np.concatenate([y_real, y_fake]) if conditional else None
                logits, taps = D.forward_with_taps(x_all, y_all)
                real_l = T.reshape(logits, (2, bsz))
                loss = d_fn(_row(real_l, 0), _row(real_l, 1))
                dl = _check(loss.item(), it, "d_loss")
                if l2sp_D:
                    pen = l2sp_penalty(d_params, _match(state.source_D, d_params), strategy.lam)
                    loss = loss + pen
                    _check(pen.item(), it, "l2sp_D")
                if fd_block is not None:
                    with T.no_grad():
                        src_tap = state.source_D.features(x_all, fd_block, y_all)
                    pen = fd_penalty(src_tap, taps[fd_block], strategy.weight)
                    loss = loss + pen
                    _check(pen.item(), it, "fd")
                T.backward(loss)
                adam_step(d_params, opt_d, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

            z = noise.normal((bsz, latent_dim))
            y_fake = noise.integers(n_cls, (bsz,)) if conditional else None
            with T.suspended(D.parameters()):
                fake = state.generate(z, y_fake)
                loss = g_fn(D(fake, y_fake))
            gl = _check(loss.item(), it, "g_loss")
            if l2sp_G:
                pen = l2sp_penalty(g_params, _match(state.source_G, g_params), strategy.lam)
                loss = loss + pen
                _check(pen.item(), it, "l2sp_G")
            T.backward(loss)
            adam_step(g_params, opt_g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

        d_sum += dl
        g_sum += gl
        n_sum += 1
        if it % cfg.eval_every == 0:
            fid = _check(fid_ctx.score(state), it, "fid")
            if frozen_checksum(state) != checksum:
                raise FreezeViolation(f"a non-trainable parameter changed before iteration {it}")
            row = HistoryRow(it, d_sum / n_sum, g_sum / n_sum, fid)
            history.append(row)
            log.info("iter %d  d_loss %.4f  g_loss %.4f  desk-FID %.4f", it, row.d_loss, row.g_loss, fid)
            if callback is not None:
                callback(row, state)
            d_sum = g_sum = 0.0
            n_sum = 0
    state.extra["opt_d"], state.extra["opt_g"], state.extra["opt_z"] = opt_d, opt_g, opt_z
    return history


def _row(t: Tensor, i: int) -> Tensor:
    n = t.shape[1]
    return T.take_rows(t, np.array([i])).reshape(n)


def _match(source: Network, params) -> list:
    named = source.named_parameters()
    return [named[p.name] for p in params]
