"""Finite-difference gradient cases shared by the unit and acceptance suites.

Each case builds a list of leaf tensors and a closure computing a scalar loss
from them. ``check`` compares tape gradients against central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from freezelab import tensor as T
from freezelab.nn import ModelConfig, build_discriminator, build_generator, build_miner
from freezelab.strategies import fd_penalty, glo_loss, l2sp_penalty
from freezelab.tensor import Tensor
from freezelab.trainer import d_loss, d_loss_hinge, g_loss

H = 1e-5
MAX_COORDS = 24


@dataclass
class Case:
    name: str
    build: object  # rng -> (leaves, loss_fn)
    seed: int


def _leaf(rng, *shape, away_from_zero=False):
    x = rng.normal(size=shape)
    if away_from_zero:
        # keep kinks (relu, abs) well outside the difference stencil
        x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05, x)
    return Tensor(x, requires_grad=True)


def _unary(op, away=False, shape=(3, 4)):
    def build(rng):
        x = _leaf(rng, *shape, away_from_zero=away)
        r = rng.normal(size=shape)
        return [x], lambda: (op(x) * r).sum()
    return build


def _binary(op, sa, sb, positive_b=False):
    def build(rng):
        a = _leaf(rng, *sa)
        b = _leaf(rng, *sb)
        if positive_b:
            b.data = np.abs(b.data) + 0.5
        r = rng.normal(size=np.broadcast_shapes(sa, sb))
        return [a, b], lambda: (op(a, b) * r).sum()
    return build


def _power(rng):
    x = Tensor(np.abs(rng.normal(size=(2, 5))) + 0.3, requires_grad=True)
    r = rng.normal(size=(2, 5))
    return [x], lambda: (T.power(x, 1.5) * r).sum()


def _reduce(kind):
    def build(rng):
        x = _leaf(rng, 3, 4, 5)
        if kind == "sum":
            r = rng.normal(size=(3, 5))
            return [x], lambda: (T.tsum(x, axis=1) * r).sum()
        r = rng.normal(size=(3, 4, 1))
        return [x], lambda: (T.mean(x, axis=2, keepdims=True) * r).sum()
    return build


def _reshape_concat(rng):
    a, b = _leaf(rng, 2, 6), _leaf(rng, 2, 3)
    r = rng.normal(size=(3, 3, 2))
    return [a, b], lambda: (T.reshape(T.concat([a, b], axis=1), (3, 3, 2)) * r).sum()


def _take_rows(rng):
    table = _leaf(rng, 5, 3)
    idx = np.array([0, 2, 2, 4, 0, 0])
    r = rng.normal(size=(6, 3))
    return [table], lambda: (T.take_rows(table, idx) * r).sum()


def _matmul(rng):
    a, b = _leaf(rng, 4, 3), _leaf(rng, 3, 5)
    r = rng.normal(size=(4, 5))
    return [a, b], lambda: (T.matmul(a, b) * r).sum()


def _conv(n, c, hw, f, k, stride, pad, unbatched=False):
    def build(rng):
        x = _leaf(rng, c, hw, hw) if unbatched else _leaf(rng, n, c, hw, hw)
        w = _leaf(rng, f, c, k, k)
        out = T.conv2d(x, w, stride, pad)
        r = rng.normal(size=out.shape)
        return [x, w], lambda: (T.conv2d(x, w, stride, pad) * r).sum()
    return build


def _upsample(rng):
    x = _leaf(rng, 2, 2, 3, 3)
    r = rng.normal(size=(2, 2, 6, 6))
    return [x], lambda: (T.upsample2x(x) * r).sum()


def _norm(rng):
    x = _leaf(rng, 2, 3, 4, 4)
    g, b = _leaf(rng, 3), _leaf(rng, 3)
    r = rng.normal(size=(2, 3, 4, 4))
    return [x, g, b], lambda: (T.scale_shift_norm(x, g, b) * r).sum()


def _softplus_loss(kind):
    def build(rng):
        real, fake = _leaf(rng, 6), _leaf(rng, 6)
        if kind == "d":
            return [real, fake], lambda: d_loss(real, fake)
        if kind == "hinge":
            real.data, fake.data = real.data * 2 + 0.3, fake.data * 2 - 0.3
            return [real, fake], lambda: d_loss_hinge(real, fake)
        return [fake], lambda: g_loss(fake)
    return build


TINY = ModelConfig(latent_dim=4, image_size=8, g_blocks=3, d_blocks=2, g_width=6, d_width=3,
                   d_features=5, feature_dim=4, miner_hidden=5)
TINY_COND = ModelConfig(**{**TINY.__dict__, "conditional": True, "n_classes": 3})


def _network(kind, cfg=TINY):
    def build(rng):
        seed = int(rng.integers(1 << 30))
        if kind == "G":
            net = build_generator(cfg, seed=seed)
            z = rng.normal(size=(3, cfg.latent_dim))
            y = np.array([0, 2, 1]) if cfg.conditional else None
            out_shape = (3, 3, cfg.image_size, cfg.image_size)
            r = rng.normal(size=out_shape)
            return net.parameters(), lambda: (net(z, y) * r).sum()
        if kind == "D":
            net = build_discriminator(cfg, seed=seed)
            x = rng.normal(size=(3, 3, cfg.image_size, cfg.image_size))
            y = np.array([1, 0, 2]) if cfg.conditional else None
            r = rng.normal(size=(3,))
            return net.parameters(), lambda: (net(x, y) * r).sum()
        net = build_miner(cfg, seed=seed)
        z = rng.normal(size=(4, cfg.latent_dim))
        r = rng.normal(size=(4, cfg.latent_dim))
        return net.parameters(), lambda: (net(z) * r).sum()
    return build


def _d_input(rng):
    net = build_discriminator(TINY, seed=int(rng.integers(1 << 30)))
    x = _leaf(rng, 2, 3, 8, 8)
    return [x], lambda: d_loss(net(x), net(x * -0.5))


def _l2sp(rng):
    a = [T.Parameter(rng.normal(size=(3, 2)), "w", "weight"), T.Parameter(rng.normal(size=(4,)), "b", "bias")]
    src = [T.Parameter(rng.normal(size=(3, 2)), "w", "weight"), T.Parameter(rng.normal(size=(4,)), "b", "bias")]
    return a, lambda: l2sp_penalty(a, src, 0.7)


def _fd(rng):
    tgt = _leaf(rng, 3, 4, 2, 2)
    src = rng.normal(size=(3, 4, 2, 2))
    return [tgt], lambda: fd_penalty(src, tgt, 1.3)


def _glo(rng):
    G = build_generator(TINY, seed=int(rng.integers(1 << 30)))
    P = build_discriminator(TINY, seed=5)
    for p in P.parameters():
        p.trainable = False
    table = T.Parameter(rng.normal(size=(5, TINY.latent_dim)), "latents", "latent")
    idx = np.array([4, 1, 1])
    real = np.tanh(rng.normal(size=(3, 3, 8, 8)))
    return [table] + G.parameters()[:2], lambda: glo_loss(G, table, idx, real, P, 0.8)


def _glo_miner(rng):
    G = build_generator(TINY, seed=int(rng.integers(1 << 30)))
    M = build_miner(TINY, seed=int(rng.integers(1 << 30)))
    table = rng.normal(size=(5, TINY.latent_dim))
    real = np.tanh(rng.normal(size=(2, 3, 8, 8)))
    return M.parameters(), lambda: glo_loss(G, table, np.array([0, 3]), real, None, 0.0, miner=M)


def _composite(rng):
    # shared subexpression: x feeds three branches that rejoin
    x = _leaf(rng, 4, 3)
    w = _leaf(rng, 3, 3)
    def f():
        h = T.matmul(x, w)
        return (T.tanh(h) * h + T.softplus(h - x) / (T.square(x) + 1.0)).mean()
    return [x, w], f


BUILDERS = [
    ("add_broadcast", _binary(T.add, (3, 4), (4,))),
    ("sub_broadcast", _binary(T.sub, (2, 1, 3), (4, 3))),
    ("mul_broadcast", _binary(T.mul, (3, 4), (3, 1))),
    ("div", _binary(T.div, (3, 4), (3, 4), positive_b=True)),
    ("power", _power),
    ("square", _unary(T.square)),
    ("abs", _unary(T.tabs, away=True)),
    ("leaky_relu", _unary(lambda x: T.leaky_relu(x, 0.2), away=True)),
    ("relu", _unary(T.relu, away=True)),
    ("tanh", _unary(T.tanh)),
    ("softplus", _unary(T.softplus, shape=(7,))),
    ("sum_axis", _reduce("sum")),
    ("mean_keepdims", _reduce("mean")),
    ("reshape_concat", _reshape_concat),
    ("take_rows_repeated", _take_rows),
    ("matmul", _matmul),
    ("conv_s1_p1", _conv(2, 3, 5, 4, 3, 1, 1)),
    ("conv_s2_p1", _conv(2, 2, 6, 3, 3, 2, 1)),
    ("conv_s1_p0", _conv(1, 2, 5, 2, 3, 1, 0)),
    ("conv_k4_s2", _conv(2, 2, 8, 3, 4, 2, 1)),
    ("conv_unbatched", _conv(1, 2, 4, 2, 3, 1, 1, unbatched=True)),
    ("upsample2x", _upsample),
    ("scale_shift_norm", _norm),
    ("d_loss", _softplus_loss("d")),
    ("g_loss", _softplus_loss("g")),
    ("generator", _network("G")),
    ("discriminator", _network("D")),
    ("generator_conditional", _network("G", TINY_COND)),
    ("discriminator_projection", _network("D", TINY_COND)),
    ("miner", _network("M")),
    ("d_wrt_images", _d_input),
    ("l2sp", _l2sp),
    ("fd_penalty", _fd),
    ("glo_loss", _glo),
    ("glo_loss_miner", _glo_miner),
    ("composite_shared", _composite),
    ("hinge", _softplus_loss("hinge")),
]


def cases(n: int = 50) -> list[Case]:
    """``n`` cases cycling through the builders with distinct seeds."""
    return [Case(f"{BUILDERS[i % len(BUILDERS)][0]}#{i}", BUILDERS[i % len(BUILDERS)][1], 1000 + i)
            for i in range(n)]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-8) over the whole gradient vector."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check(case: Case, h: float = H) -> float:
    """Relative error of the case's gradient, over sampled coordinates of every input.

    The error is normalised by the whole gradient rather than per tensor: some
    parameters (a conv bias feeding a normalisation) have an exactly zero
    gradient, where only difference round-off remains.
    """
    rng = np.random.default_rng(case.seed)
    leaves, loss_fn = case.build(rng)
    for leaf in leaves:
        leaf.grad = None if not isinstance(leaf, T.Parameter) else np.zeros_like(leaf.data)
    T.backward(loss_fn())
    analytic, numeric = [], []
    for leaf in leaves:
        grad = np.asarray(leaf.grad, dtype=np.float64).reshape(-1)
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > MAX_COORDS:
            coords = rng.choice(flat.size, MAX_COORDS, replace=False)
        with T.no_grad():
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                up = loss_fn().item()
                flat[c] = orig - h
                down = loss_fn().item()
                flat[c] = orig
                numeric.append((up - down) / (2 * h))
        analytic.extend(grad[coords])
    return relative_error(np.array(analytic), np.array(numeric))
