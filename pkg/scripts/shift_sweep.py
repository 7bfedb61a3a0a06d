"""desk-FID between source and shifted-target samples as the shift grows.

    python scripts/shift_sweep.py --samples 1024
"""
import argparse

from freezelab.data import DatasetSpec, make_dataset
from freezelab.fid import fid, make_extractor


def sample(shift, n, seed):
    spec = DatasetSpec(shift=shift)
    return make_dataset(spec, -(-n // spec.n_classes), seed=seed).images[:n]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1024)
    ap.add_argument("--shifts", default="0,0.25,0.5,0.75,1.0")
    ap.add_argument("--extractor-seed", type=int, default=1234)
    args = ap.parse_args()

    ext = make_extractor(seed=args.extractor_seed)
    src = sample(0.0, args.samples, seed=91)
    print("shift  desk-FID")
    for s in (float(v) for v in args.shifts.split(",")):
        print(f"{s:5.2f}  {fid(src, sample(s, args.samples, seed=92), ext):.4f}")


if __name__ == "__main__":
    main()
