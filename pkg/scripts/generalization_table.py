"""Seen-class, unseen-class and total test MSE at the table horizon for each variant and seed."""

from _common import parser, seed_config
from cutmpc import pipeline


def main():
    args = parser(__doc__).parse_args()
    for s in args.seeds:
        table = pipeline.offline_study(seed_config(args, s), overwrite=args.overwrite)["table"]
        best = min(table, key=lambda v: table[v][2])
        print(f"seed {s}  (lowest total: {best})")
        print(f"  {'model':<10}{'seen':>10}{'unseen':>10}{'total':>10}")
        for v, (seen, unseen, total) in table.items():
            print(f"  {v:<10}{seen:10.5f}{unseen:10.5f}{total:10.5f}")


if __name__ == "__main__":
    main()
