"""Closed-loop cutting on every object class with a trained model, one table per seed.

Trains the requested variant first if its checkpoint is missing.
"""

from _common import parser, seed_config
from cutmpc import pipeline
from cutmpc.train import VARIANTS


def main():
    p = parser(__doc__)
    p.add_argument("--variant", choices=VARIANTS, default="lstm-lr-c")
    args = p.parse_args()
    for s in args.seeds:
        cfg = seed_config(args, s)
        pipeline.collect(cfg)
        pipeline.train_variant(cfg, args.variant)
        table = pipeline.run_mpc(cfg, args.variant, args.overwrite)
        print(f"seed {s}: {table}")
        print(table.read_text())


if __name__ == "__main__":
    main()
