"""Experiment commands behind the CLI: pretrain, transfer, ablate, fid, grid.

Each command takes a :class:`RunConfig` and an output directory, writes its
artifacts there, and returns the in-memory results so scripts and tests can
use them without re-reading files. Everything written is a function of the
config and seed alone; no timestamps or timings are stored.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import MAGIC as CHECKPOINT_MAGIC
from .checkpoint import checkpoint_from_bytes, load_checkpoint, save_checkpoint
from .config import RunConfig, config_text, make_strategy
from .data import MAGIC as DATASET_MAGIC
from .data import Dataset, dataset_from_bytes, load_dataset, make_dataset
from .errors import CheckpointMismatchError, ConfigError, FormatError
from .fid import frechet, image_stats, make_extractor
from .grid import tile, write_ppm
from .nn import Network, build_discriminator, build_generator, config_to_dict
from .rng import Rng, derive
from .strategies import FreezeD, FullFineTune, TrainState, prepare
from .trainer import FidContext, History, generate_images, train

log = logging.getLogger(__name__)

# dataset seeds are derived from the run seed with these keys
SOURCE_TRAIN, SOURCE_EVAL, TARGET_TRAIN, TARGET_EVAL = 11, 12, 21, 22
GRID_STREAM_KEY = 7


# ---------------------------------------------------------------- summaries


@dataclass
class SummaryTable:
    """Rows of (label, best desk-FID, final desk-FID)."""

    eval_every: int
    rows: list = field(default_factory=list)

    def add(self, label: str, history: History) -> None:
        self.rows.append((label, history.best_fid, history.final_fid))

    def to_text(self) -> str:
        width = max([len("label")] + [len(r[0]) for r in self.rows])
        lines = [
            f"# desk-FID (random-feature FID, not comparable to Inception FID); "
            f"best = min over evaluations every {self.eval_every} iterations, final = last",
            f"{'label':<{width}}  {'best':>10}  {'final':>10}",
        ]
        lines += [f"{label:<{width}}  {best:>10.4f}  {final:>10.4f}" for label, best, final in self.rows]
        return "\n".join(lines) + "\n"

    def to_wide_text(self) -> str:
        """One column per run with ``best / final`` cells."""
        cells = [f"{best:.4f} / {final:.4f}" for _, best, final in self.rows]
        widths = [max(len(label), len(cell)) for (label, _, _), cell in zip(self.rows, cells)]
        head = "  ".join(f"{r[0]:<{w}}" for r, w in zip(self.rows, widths))
        body = "  ".join(f"{c:<{w}}" for c, w in zip(cells, widths))
        return (
            f"# desk-FID best / final; Layer k = first k discriminator blocks frozen; "
            f"eval_every={self.eval_every}\n{head.rstrip()}\n{body.rstrip()}\n"
        )

    def to_csv(self) -> str:
        lines = ["label,best_fid,final_fid"]
        lines += [f"{label},{best:.10g},{final:.10g}" for label, best, final in self.rows]
        return "\n".join(lines) + "\n"


def write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- data


def source_dataset(cfg: RunConfig) -> Dataset:
    if cfg.source_data:
        return load_dataset(cfg.path("source_data"))
    return make_dataset(cfg.source_spec(), cfg.source_per_class, seed=derive(cfg.seed, SOURCE_TRAIN))


def target_dataset(cfg: RunConfig) -> Dataset:
    if cfg.target_data:
        return load_dataset(cfg.path("target_data"))
    return make_dataset(cfg.target_spec(), cfg.target_per_class, seed=derive(cfg.seed, TARGET_TRAIN))


def _eval_images(spec, n: int, seed: int) -> np.ndarray:
    per_class = math.ceil(n / spec.n_classes)
    return make_dataset(spec, per_class, seed=seed).images


def fid_context(cfg: RunConfig, domain: str) -> FidContext:
    """Real-side statistics from a held-out sample of ``domain`` plus the eval latents.

    The held-out sample is rendered with its own seed, so it never overlaps the
    training images.
    """
    if domain == "source":
        spec, key = cfg.source_spec(), SOURCE_EVAL
    elif domain == "target":
        spec, key = cfg.target_spec(), TARGET_EVAL
    else:
        raise ConfigError(f"unknown domain {domain!r}")
    mcfg = cfg.model_config()
    real = _eval_images(spec, cfg.fid_samples, derive(cfg.seed, key))
    extractor = make_extractor(mcfg, seed=cfg.extractor_seed)
    n_classes = spec.n_classes if mcfg.conditional else None
    return FidContext.build(extractor, real, cfg.fid_samples, cfg.seed, mcfg.latent_dim, n_classes)


# ---------------------------------------------------------------- grids


def grid_latents(cfg: RunConfig, latent_dim: int) -> np.ndarray:
    n = cfg.grid_rows * cfg.grid_cols
    return Rng.stream(cfg.grid_seed, "eval", GRID_STREAM_KEY).normal((n, latent_dim))


def render_grid(generate, cfg: RunConfig, latent_dim: int, n_classes=None) -> np.ndarray:
    z = grid_latents(cfg, latent_dim)
    labels = None if n_classes is None else np.arange(len(z)) % n_classes
    return tile(generate(z, labels), cfg.grid_rows, cfg.grid_cols)


def _grid_sidecar(cfg: RunConfig, latent_dim: int) -> str:
    return (
        "# before/after grids are rendered from this identical latent set\n"
        f"grid_seed = {cfg.grid_seed}\nstream = eval/{GRID_STREAM_KEY}\n"
        f"rows = {cfg.grid_rows}\ncols = {cfg.grid_cols}\nlatent_dim = {latent_dim}\n"
    )


def _generator_fn(G: Network, miner: Network | None = None):
    state = TrainState(G, G, G, G, FullFineTune(), miner=miner)
    return lambda z, y: generate_images(state, z, y)


# ---------------------------------------------------------------- pretrain


def run_pretrain(cfg: RunConfig, dataset: Dataset | None = None, fid_ctx: FidContext | None = None):
    """Train a source G and D from scratch; returns ``(history, state)``."""
    mcfg = cfg.model_config()
    dataset = source_dataset(cfg) if dataset is None else dataset
    fid_ctx = fid_context(cfg, "source") if fid_ctx is None else fid_ctx
    G, D = build_generator(mcfg), build_discriminator(mcfg)
    state = prepare(FullFineTune(), G, D, dataset, seed=cfg.seed)
    history = train(state, dataset, cfg.train_config(), fid_ctx)
    return history, state


def cmd_pretrain(cfg: RunConfig, out) -> History:
    out = _prepare_out(out)
    write_text(out / "config.txt", config_text(cfg))
    history, state = run_pretrain(cfg)
    save_checkpoint(state.G, out / "source_G.frzd")
    save_checkpoint(state.D, out / "source_D.frzd")
    write_text(out / "fid_log.csv", history.to_csv())
    table = SummaryTable(cfg.eval_every)
    table.add("pretrain", history)
    write_text(out / "summary.txt", table.to_text())
    return history


# ---------------------------------------------------------------- transfer


def _arch(cfg) -> dict:
    d = config_to_dict(cfg)
    for key in ("seed", "miner_hidden"):
        d.pop(key)
    return d


def load_sources(cfg: RunConfig):
    """Source G and D from the configured checkpoints, checked against the model keys."""
    G, D = load_checkpoint(cfg.path("source_g")), load_checkpoint(cfg.path("source_d"))
    check_sources(cfg, G, D)
    return G, D


def check_sources(cfg: RunConfig, G: Network, D: Network) -> None:
    want = _arch(cfg.model_config())
    for net, kind in ((G, "generator"), (D, "discriminator")):
        if net.kind != kind:
            raise CheckpointMismatchError(f"expected a {kind} checkpoint, got {net.kind}")
        got = _arch(net.cfg)
        diff = sorted(k for k in want if want[k] != got.get(k))
        if diff:
            raise CheckpointMismatchError(
                f"{kind} checkpoint disagrees with config on {', '.join(diff)}"
            )


def run_transfer(cfg: RunConfig, strategy, source_G: Network, source_D: Network,
                 target: Dataset | None = None, fid_ctx: FidContext | None = None):
    """Prepare and train one strategy; returns ``(history, state)``."""
    target = target_dataset(cfg) if target is None else target
    fid_ctx = fid_context(cfg, "target") if fid_ctx is None else fid_ctx
    state = prepare(strategy, source_G, source_D, target, seed=cfg.seed)
    history = train(state, target, cfg.train_config(), fid_ctx)
    return history, state


def cmd_transfer(cfg: RunConfig, strategy_name: str, out, sources=None,
                 target: Dataset | None = None, fid_ctx: FidContext | None = None) -> History:
    out = _prepare_out(out)
    strategy = make_strategy(strategy_name, cfg)
    G, D = load_sources(cfg) if sources is None else sources
    write_text(out / "config.txt", config_text(cfg.replace(strategy=strategy_name)))
    mcfg = G.cfg
    n_classes = mcfg.n_classes if mcfg.conditional else None
    write_ppm(out / "grid_before.ppm", render_grid(_generator_fn(G), cfg, mcfg.latent_dim, n_classes))

    history, state = run_transfer(cfg, strategy, G, D, target, fid_ctx)

    after = render_grid(_generator_fn(state.G, state.miner), cfg, mcfg.latent_dim, n_classes)
    write_ppm(out / "grid_after.ppm", after)
    write_text(out / "grid_latents.txt", _grid_sidecar(cfg, mcfg.latent_dim))
    save_checkpoint(state.G, out / "target_G.frzd")
    save_checkpoint(state.D, out / "target_D.frzd")
    if state.miner is not None:
        save_checkpoint(state.miner, out / "target_miner.frzd")
    write_text(out / "fid_log.csv", history.to_csv())
    table = SummaryTable(cfg.eval_every)
    table.add(strategy_name, history)
    write_text(out / "summary.txt", table.to_text())
    return history


# ---------------------------------------------------------------- ablate


def depth_label(k: int) -> str:
    return f"Layer {k}"


def cmd_ablate(cfg: RunConfig, depths, out, sources=None, target: Dataset | None = None,
               fid_ctx: FidContext | None = None) -> SummaryTable:
    """Fine-tuning plus one FreezeD run per depth, all with the same seed."""
    out = _prepare_out(out)
    G, D = load_sources(cfg) if sources is None else sources
    n_blocks = len(D.blocks)
    bad = [k for k in depths if not 0 <= k <= n_blocks]
    if bad:
        raise ConfigError(f"freeze depths {bad} outside [0, {n_blocks}]")
    write_text(out / "config.txt", config_text(cfg.replace(depths=",".join(map(str, depths)))))
    target = target_dataset(cfg) if target is None else target
    fid_ctx = fid_context(cfg, "target") if fid_ctx is None else fid_ctx

    table = SummaryTable(cfg.eval_every)
    runs = [("finetune", "Fine-tuning", FullFineTune())]
    runs += [(f"layer_{k}", depth_label(k), FreezeD(k)) for k in depths]
    for subdir, label, strategy in runs:
        log.info("ablation run %s", label)
        history, _ = run_transfer(cfg, strategy, G, D, target, fid_ctx)
        run_dir = _prepare_out(out / subdir)
        write_text(run_dir / "fid_log.csv", history.to_csv())
        table.add(label, history)
    write_text(out / "ablation.txt", table.to_wide_text())
    write_text(out / "ablation.csv", table.to_csv())
    return table


# ---------------------------------------------------------------- fid


def sibling_miner(path) -> Network | None:
    """The ``X_miner.frzd`` saved next to a MineGAN ``X_G.frzd``, if any."""
    path = Path(path)
    if not path.name.endswith("_G.frzd"):
        return None
    miner_path = path.with_name(path.name[: -len("_G.frzd")] + "_miner.frzd")
    if not miner_path.exists():
        return None
    miner = load_checkpoint(miner_path)
    if miner.kind != "miner":
        raise CheckpointMismatchError(f"{miner_path}: expected a miner checkpoint, got {miner.kind}")
    log.info("sampling %s through %s", path.name, miner_path.name)
    return miner


def archive_images(path, cfg: RunConfig) -> np.ndarray:
    """Images from a FRZS dataset, or ``fid_samples`` draws from a FRZD generator."""
    data = Path(path).read_bytes()
    if data[:4] == DATASET_MAGIC:
        return dataset_from_bytes(data).images
    if data[:4] == CHECKPOINT_MAGIC:
        net = checkpoint_from_bytes(data)
        if net.kind != "generator":
            raise CheckpointMismatchError(f"{path}: need a generator checkpoint, got {net.kind}")
        z = Rng.stream(cfg.seed, "eval").normal((cfg.fid_samples, net.cfg.latent_dim))
        labels = np.arange(len(z)) % net.n_classes if net.conditional else None
        return _generator_fn(net, sibling_miner(path))(z, labels)
    raise FormatError(f"{path}: neither a FRZS dataset nor a FRZD checkpoint")


def cmd_fid(cfg: RunConfig) -> tuple[float, str]:
    """Returns ``(value, printable text)``."""
    a, b = cfg.path("fid_a"), cfg.path("fid_b")
    xa, xb = archive_images(a, cfg), archive_images(b, cfg)
    if xa.shape[1:] != xb.shape[1:]:
        raise FormatError(f"image shapes differ: {xa.shape[1:]} vs {xb.shape[1:]}")
    mcfg = cfg.model_config()
    if xa.shape[1:] != (mcfg.channels, mcfg.image_size, mcfg.image_size):
        raise FormatError(f"archive images {xa.shape[1:]} do not match image_size={mcfg.image_size}")
    extractor = make_extractor(mcfg, seed=cfg.extractor_seed)
    value = frechet(image_stats(extractor, xa), image_stats(extractor, xb))
    text = (
        f"desk-FID {value:.4f}\n"
        f"# a={cfg.fid_a} (n={len(xa)}) b={cfg.fid_b} (n={len(xb)}) extractor_seed={cfg.extractor_seed}\n"
    )
    return value, text


# ---------------------------------------------------------------- grid


def cmd_grid(cfg: RunConfig, out) -> Path:
    path = cfg.path("grid_checkpoint")
    net = load_checkpoint(path)
    if net.kind != "generator":
        raise CheckpointMismatchError(f"grid needs a generator checkpoint, got {net.kind}")
    out = _prepare_out(out)
    n_classes = net.n_classes if net.conditional else None
    canvas = render_grid(_generator_fn(net, sibling_miner(path)), cfg, net.cfg.latent_dim, n_classes)
    path = out / "grid.ppm"
    write_ppm(path, canvas)
    write_text(out / "grid_latents.txt", _grid_sidecar(cfg, net.cfg.latent_dim))
    return path


# ---------------------------------------------------------------- multi-seed sweeps


def seed_sweep(cfg: RunConfig, runs: dict, seeds, sources, cache: dict | None = None) -> dict:
    """``{label: [History per seed]}`` for each ``label -> strategy`` in ``runs``.

    The source networks stay fixed; each seed re-renders the target training
    set and held-out sample and reseeds training noise. ``cache`` maps
    ``(label, seed)`` to a History and lets sweeps share runs.
    """
    cache = {} if cache is None else cache
    G, D = sources
    results = {label: [] for label in runs}
    for seed in seeds:
        scfg = cfg.replace(seed=seed)
        target = ctx = None
        for label, strategy in runs.items():
            if (label, seed) not in cache:
                if target is None:
                    target, ctx = target_dataset(scfg), fid_context(scfg, "target")
                log.info("seed %d: %s", seed, label)
                cache[label, seed], _ = run_transfer(scfg, strategy, G, D, target, ctx)
            results[label].append(cache[label, seed])
    return results


def median_table(results: dict, eval_every: int) -> SummaryTable:
    """Per-label medians of best and final desk-FID across seeds."""
    table = SummaryTable(eval_every)
    for label, histories in results.items():
        table.rows.append((
            label,
            float(np.median([h.best_fid for h in histories])),
            float(np.median([h.final_fid for h in histories])),
        ))
    return table
