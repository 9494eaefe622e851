"""Test MSE against prediction horizon for the four model variants, over several seeds.

Writes <root>/horizon_curves.csv with the per-seed curves and prints the seed mean.
"""

import csv

import numpy as np

from _common import parser, seed_config
from cutmpc import pipeline
from cutmpc.train import VARIANTS


def main():
    args = parser(__doc__).parse_args()
    rows, curves = [], {v: [] for v in VARIANTS}
    for s in args.seeds:
        res = pipeline.offline_study(seed_config(args, s), overwrite=args.overwrite)
        for v, c in res["curves"].items():
            curves[v].append(c)
            rows += [(s, v, h + 1, x) for h, x in enumerate(c)]
    args.root.mkdir(parents=True, exist_ok=True)
    with open(args.root / "horizon_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "model", "horizon_blocks", "mse_mm2"])
        w.writerows(rows)
    print("mean MSE (mm^2) by horizon, averaged over seeds", args.seeds)
    print("h   " + "".join(f"{v:>12}" for v in VARIANTS))
    mean = {v: np.mean(c, axis=0) for v, c in curves.items()}
    for h in range(len(mean[VARIANTS[0]])):
        print(f"{h + 1:<4}" + "".join(f"{mean[v][h]:12.5f}" for v in VARIANTS))


if __name__ == "__main__":
    main()
