"""Freeze-depth ablation: fine-tuning plus FreezeD at each depth.

Single seed by default, like ``freezelab ablate``; with ``--seeds N`` it
reports medians over seeds 0..N-1 instead.

    python scripts/freeze_depth_ablation.py --seeds 5
"""
import argparse
import logging
from pathlib import Path

from freezelab.config import load_config, parse_depths
from freezelab.harness import cmd_ablate, depth_label, load_sources, median_table, seed_sweep
from freezelab.strategies import FreezeD, FullFineTune

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=HERE / "configs" / "ablate.cfg")
    ap.add_argument("--depths", help="override the config's depth list")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--out", default="runs/ablate")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    depths = parse_depths(args.depths) if args.depths else cfg.depth_list()
    if args.seeds == 1:
        print(cmd_ablate(cfg, depths, args.out).to_wide_text())
        return
    runs = {"Fine-tuning": FullFineTune()}
    runs.update({depth_label(k): FreezeD(k) for k in depths})
    results = seed_sweep(cfg, runs, range(args.seeds), load_sources(cfg))
    print(f"# medians over {args.seeds} seeds")
    print(median_table(results, cfg.eval_every).to_wide_text())


if __name__ == "__main__":
    main()
