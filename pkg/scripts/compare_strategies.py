"""One transfer run per strategy on the same source, target and seed.

Writes each run under <out>/<strategy>/ and a summary table of best and final
desk-FID for all of them.

    python scripts/compare_strategies.py --out runs/compare
"""
import argparse
import logging
from pathlib import Path

from freezelab.config import load_config
from freezelab.harness import SummaryTable, cmd_transfer, fid_context, load_sources, target_dataset, write_text

HERE = Path(__file__).resolve().parent
STRATEGIES = (
    "finetune", "finetune_glo", "scaleshift", "scaleshift_glo", "minegan", "minegan_glo",
    "l2sp_g", "l2sp_d", "l2sp_gd", "freezed", "fd",
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=HERE / "configs" / "transfer.cfg")
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--only", help="comma-separated subset of strategies")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    names = args.only.split(",") if args.only else STRATEGIES
    sources = load_sources(cfg)
    target, ctx = target_dataset(cfg), fid_context(cfg, "target")
    out = Path(args.out)
    table = SummaryTable(cfg.eval_every)
    for name in names:
        table.add(name, cmd_transfer(cfg, name, out / name, sources, target, ctx))
    write_text(out / "summary.txt", table.to_text())
    print(table.to_text())


if __name__ == "__main__":
    main()
