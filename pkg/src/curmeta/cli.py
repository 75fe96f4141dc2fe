"""Command line entry point.

Subcommands cover the full experiment lifecycle: generate data, meta-train
an initialization, fine-tune it on a task, evaluate a checkpoint, run the
comparison sweep, and extract learning curves from a run log.  Failures exit
with status 1 and a single "[stage] message" line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    StageError,
    default_architecture,
    default_plan,
    emit_curves,
    run_sweep,
    write_manifest,
)
from .meta import (
    FineTuneConfig,
    MetaConfig,
    RunLog,
    config_to_dict,
    fine_tune,
    infer,
    load_checkpoint,
    meta_train,
    save_checkpoint,
)
from .metrics import compute_auc
from .samplers import SamplerKind
from .tasks import (
    K5,
    SourceConfig,
    TASK_BY_ID,
    derive_stream,
    generate_source,
    map_labels,
    read_split_dataset,
    write_split_dataset,
)

META_FLAG_FIELDS = {
    "seed": "seed",
    "sampler": "sampler",
    "meta_batch": "meta_batch_size",
    "no_target_task": "exclude_target_task",
    "gradient_mode": "gradient_mode",
    "adaptation_rate": "adaptation_rate",
    "meta_rate": "meta_rate",
    "meta_updates": "meta_updates",
    "inner_steps": "inner_steps",
    "n_tr": "n_tr",
    "n_val": "n_val",
}


def _add_meta_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file of meta-training fields")
    parser.add_argument("--seed", type=int, help="meta-training seed")
    parser.add_argument("--sampler", choices=[k.value for k in SamplerKind])
    parser.add_argument("--meta-batch", type=int, help="tasks per meta-update")
    parser.add_argument(
        "--no-target-task",
        action="store_const",
        const=True,
        help="drop the target task from the meta-training pool",
    )
    parser.add_argument("--gradient-mode", choices=["first", "second"])
    parser.add_argument("--adaptation-rate", type=float)
    parser.add_argument("--meta-rate", type=float)
    parser.add_argument("--meta-updates", type=int)
    parser.add_argument("--inner-steps", type=int)
    parser.add_argument("--n-tr", type=int, help="support set size per episode")
    parser.add_argument("--n-val", type=int, help="query set size per episode")


def build_meta_config(args) -> MetaConfig:
    fields = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        fields.update(doc)
    for flag, name in META_FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            fields[name] = value
    try:
        return MetaConfig(**fields)
    except TypeError as e:
        raise ValueError(f"bad config field: {e}") from e


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--data", type=Path, help="directory of existing split TSVs")
    group.add_argument("--data-seed", type=int, help="synthesize data with this seed")
    parser.add_argument("--n-subjects", type=int, default=117)


def load_data(args):
    if args.data is not None:
        return read_split_dataset(args.data)
    seed = args.data_seed if args.data_seed is not None else 0
    return generate_source(SourceConfig(seed=seed), args.n_subjects)


def cmd_generate(args) -> int:
    try:
        seed = args.data_seed if args.data_seed is not None else 0
        data = generate_source(SourceConfig(seed=seed, dim=args.dim), args.n_subjects)
        paths = write_split_dataset(args.out, data)
        write_manifest(
            args.out,
            paths.values(),
            config={"dim": args.dim, "n_subjects": args.n_subjects},
            seeds={"data_seed": seed},
        )
    except Exception as e:
        raise StageError("generate", str(e)) from e
    print(f"wrote {len(paths)} splits to {args.out}")
    return 0


def cmd_meta_train(args) -> int:
    try:
        config = build_meta_config(args)
        data = load_data(args)
    except StageError:
        raise
    except Exception as e:
        raise StageError("meta-train", str(e)) from e
    try:
        arch = default_architecture(data.train[0].features.shape[0], args.hidden)
        model, log = meta_train(arch, config, data)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.json"
        save_checkpoint(ckpt, model)
        log_path = out / "run_log.tsv"
        log_path.write_text(log.to_tsv())
        write_manifest(
            out,
            [ckpt, log_path],
            config=config_to_dict(config),
            seeds={"seed": config.seed, "data_seed": args.data_seed},
        )
    except Exception as e:
        raise StageError("meta-train", str(e)) from e
    print(f"meta-trained {config.meta_updates} updates, checkpoint at {ckpt}")
    return 0


def cmd_fine_tune(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
        data = load_data(args)
        task = TASK_BY_ID[args.task]
        ft = FineTuneConfig(
            learning_rate=args.learning_rate, batch_size=args.batch_size, epochs=args.epochs
        )
        seed = args.seed if args.seed is not None else 0
        tuned = fine_tune(model, task, data, ft, rng=derive_stream(seed, 1))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.json"
        save_checkpoint(ckpt, tuned)
        write_manifest(
            out,
            [ckpt],
            config={"task": args.task, "fine_tune": config_to_dict(ft)},
            seeds={"seed": seed, "data_seed": args.data_seed},
        )
    except StageError:
        raise
    except Exception as e:
        raise StageError("fine-tune", str(e)) from e
    print(f"fine-tuned on {args.task}, checkpoint at {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
        data = load_data(args)
        task = TASK_BY_ID[args.task]
        batch = map_labels(task, getattr(data, args.split))
        auc = compute_auc(infer(model, batch.inputs), batch.labels)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = out / "result.json"
        result.write_text(
            json.dumps(
                {"task": args.task, "split": args.split, "auc": auc}, indent=2, sort_keys=True
            )
            + "\n"
        )
        write_manifest(
            out,
            [result],
            config={"task": args.task, "split": args.split},
            seeds={"data_seed": args.data_seed},
        )
    except StageError:
        raise
    except Exception as e:
        raise StageError("evaluate", str(e)) from e
    print(f"{args.task} {args.split} AUC: {auc:.6f}")
    return 0


def cmd_sweep(args) -> int:
    try:
        plan = default_plan(
            meta_updates=args.meta_updates,
            repetitions=args.repetitions,
            data_seed=args.data_seed if args.data_seed is not None else 0,
            run_seed=args.run_seed,
            include_baselines=not args.no_baselines,
        )
        table = run_sweep(plan, args.out)
    except StageError:
        raise
    except Exception as e:
        raise StageError("sweep", str(e)) from e
    print(table.render_text(), end="")
    return 0


def cmd_curves(args) -> int:
    try:
        log = RunLog.from_tsv(Path(args.log).read_text())
        paths = emit_curves(log, args.out, window=args.window)
        write_manifest(args.out, paths.values(), config={"window": args.window})
    except StageError:
        raise
    except Exception as e:
        raise StageError("curves", str(e)) from e
    print(f"wrote curves for {len(log.records)} meta-updates to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curmeta",
        description="curriculum and bandit task sampling for meta-learned initializations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize the subject-split source data")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--n-subjects", type=int, default=117)
    p.add_argument("--dim", type=int, default=16)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("meta-train", help="train an initialization across the task pool")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--hidden", type=int, default=24)
    _add_meta_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("fine-tune", help="adapt a checkpoint to one task")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--task", choices=sorted(TASK_BY_ID), default=K5.id)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int)
    _add_data_flags(p)
    p.set_defaults(func=cmd_fine_tune)

    p = sub.add_parser("evaluate", help="score a checkpoint on a data split")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--task", choices=sorted(TASK_BY_ID), default=K5.id)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    _add_data_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the full sampler/baseline comparison grid")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--meta-updates", type=int, default=3000)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--run-seed", type=int, default=0)
    p.add_argument("--no-baselines", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("curves", help="extract per-task curves from a run log")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(func=cmd_curves)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as e:
        print(str(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
