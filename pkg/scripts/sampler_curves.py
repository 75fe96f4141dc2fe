"""Meta-train one run per requested sampler and extract its learning curves.

For each sampler this writes <out>/<sampler>/run_log.tsv plus the derived
task_curves.tsv and sampling_histogram.tsv, which show where the selection
strategy spends its meta-batches over the course of training.
"""

import argparse
from pathlib import Path

from curmeta.harness import default_architecture, emit_curves
from curmeta.meta import MetaConfig, meta_train
from curmeta.samplers import SamplerKind
from curmeta.tasks import SourceConfig, generate_source


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--samplers",
        nargs="+",
        default=["random", "cl"],
        choices=[k.value for k in SamplerKind],
    )
    parser.add_argument("--meta-updates", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--n-subjects", type=int, default=117)
    parser.add_argument("--window", type=int, default=100)
    return parser.parse_args()


def main():
    args = parse_args()
    data = generate_source(SourceConfig(seed=args.data_seed), args.n_subjects)
    arch = default_architecture(SourceConfig().dim)
    for sampler in args.samplers:
        # batch 5 doubles as the required pool-size batch for alltask
        config = MetaConfig(
            meta_updates=args.meta_updates,
            sampler=sampler,
            meta_batch_size=5,
            seed=args.seed,
        )
        _, log = meta_train(arch, config, data)
        out = Path(args.out) / sampler
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_log.tsv").write_text(log.to_tsv())
        emit_curves(log, out, window=args.window)
        print(f"{sampler}: {len(log.records)} meta-updates -> {out}")


if __name__ == "__main__":
    main()
