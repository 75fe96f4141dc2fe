"""Run the full sampler/baseline comparison grid and print the result table.

The defaults here are a reduced budget (500 meta-updates) that finishes on a
laptop; pass --meta-updates 3000 for the full-size run.
"""

import argparse
from dataclasses import replace

from curmeta.harness import default_plan, run_sweep
from curmeta.meta import FineTuneConfig


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--meta-updates", type=int, default=500)
    parser.add_argument("--repetitions", type=int, default=10)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--run-seed", type=int, default=0)
    parser.add_argument("--n-subjects", type=int, default=117)
    parser.add_argument("--ft-epochs", type=int, default=200)
    parser.add_argument("--no-baselines", action="store_true")
    return parser.parse_args()


def main():
    args = parse_args()
    plan = default_plan(
        meta_updates=args.meta_updates,
        repetitions=args.repetitions,
        data_seed=args.data_seed,
        run_seed=args.run_seed,
        include_baselines=not args.no_baselines,
    )
    plan = replace(
        plan,
        n_subjects=args.n_subjects,
        fine_tune=FineTuneConfig(epochs=args.ft_epochs),
    )
    table = run_sweep(plan, args.out)
    print(table.render_text(), end="")


if __name__ == "__main__":
    main()
