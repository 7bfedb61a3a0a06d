"""Fine-tuning vs FreezeD at depths 2, 3, 4 over several seeds.

Counts, per seed, whether the chosen FreezeD depth ends with a lower final
desk-FID than fine-tuning and whether its (final - best) gap is smaller.

    python scripts/freezed_vs_finetune.py --seeds 10
"""
import argparse
import logging
import time
from pathlib import Path

from freezelab.config import load_config
from freezelab.harness import load_sources, median_table, seed_sweep
from freezelab.strategies import FreezeD, FullFineTune

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=HERE / "configs" / "transfer.cfg")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--depths", default="2,3,4")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    depths = [int(k) for k in args.depths.split(",")]
    runs = {"Fine-tuning": FullFineTune()}
    runs.update({f"Layer {k}": FreezeD(k) for k in depths})
    start = time.perf_counter()
    results = seed_sweep(cfg, runs, range(args.seeds), load_sources(cfg))
    table = median_table(results, cfg.eval_every)
    print(table.to_text())

    ft = results["Fine-tuning"]
    best = min((row for row in table.rows if row[0] != "Fine-tuning"), key=lambda r: r[2])[0]
    fz = results[best]
    wins = sum(f.final_fid <= t.final_fid for f, t in zip(fz, ft))
    stable = sum(f.final_fid - f.best_fid < t.final_fid - t.best_fid for f, t in zip(fz, ft))
    for seed, (f, t) in enumerate(zip(fz, ft)):
        print(f"seed {seed}: fine-tuning {t.best_fid:.3f}/{t.final_fid:.3f}  "
              f"{best} {f.best_fid:.3f}/{f.final_fid:.3f}")
    print(f"{best}: lower final desk-FID in {wins}/{len(ft)} seeds, "
          f"smaller final-best gap in {stable}/{len(ft)} seeds "
          f"({time.perf_counter() - start:.0f} s)")


if __name__ == "__main__":
    main()
