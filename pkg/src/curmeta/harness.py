"""Experiment pipeline and sweep orchestration.

A pipeline run is generate -> pretrain -> fine-tune -> evaluate: synthesize
the subject-split source data, optionally pretrain an initialization (via
meta-training or the joint multi-task baseline), fine-tune on the target
task, and score the fine-tuned model on the held-out test split.  Every run
directory gets a manifest listing the relative path and sha256 of each
artifact, with no timestamps, so identical inputs produce byte-identical
output trees.

A sweep runs a plan of variants over paired repetition seeds (repetition r
uses the same data and run seed for every variant) and aggregates test AUC
into a result table with one cell per (model, meta-batch, sampler) plus
baseline rows.  Structurally impossible cells (the all-task sampler with a
meta-batch unlike the pool size) are marked not applicable rather than run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nets
from .metrics import compute_auc
from .meta import (
    FineTuneConfig,
    MetaConfig,
    Provenance,
    RunLog,
    TrainedModel,
    config_to_dict,
    fine_tune,
    infer,
    meta_train,
    multitask_train,
    save_checkpoint,
)
from .nets import Architecture
from .samplers import SamplerKind
from .tasks import (
    K5,
    SourceConfig,
    TASKS,
    derive_stream,
    generate_source,
    map_labels,
    write_split_dataset,
)


class StageError(RuntimeError):
    """A pipeline stage failed; the message is prefixed with the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


BASELINE_KINDS = ("plain", "multitask")
DEFAULT_HIDDEN = 24


def default_architecture(dim: int, hidden: int = DEFAULT_HIDDEN) -> Architecture:
    return Architecture((dim, hidden, 2), "relu")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir, paths, config: dict | None = None, seeds: dict | None = None) -> Path:
    """Record config, seeds, and the path/content hash of every run artifact."""
    out_dir = Path(out_dir)
    files = {str(Path(p).relative_to(out_dir).as_posix()): _sha256(Path(p)) for p in paths}
    doc = {"config": config or {}, "seeds": seeds or {}, "files": files}
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest


def run_pipeline(
    recipe,
    out_dir,
    data_seed: int = 0,
    run_seed: int = 0,
    ft: FineTuneConfig | None = None,
    arch: Architecture | None = None,
    n_subjects: int = 117,
    source: SourceConfig | None = None,
    mt_iterations: int = 3000,
    mt_rate: float = 0.01,
) -> dict:
    """Run one full experiment and return the result record.

    ``recipe`` selects the pretraining stage: a MetaConfig runs meta-training
    (its seed replaced by ``run_seed``), the string "plain" skips pretraining
    and fine-tunes from a fresh initialization, "multitask" pretrains with the
    joint multi-head baseline.  Artifacts: data/ split TSVs, run_log.tsv (meta
    only), checkpoint.json (fine-tuned model), result.json, manifest.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ft = ft if ft is not None else FineTuneConfig()
    if isinstance(recipe, str) and recipe not in BASELINE_KINDS:
        raise StageError("pretrain", f"unknown pipeline designator {recipe!r}")

    try:
        src = source if source is not None else SourceConfig(seed=data_seed)
        data = generate_source(src, n_subjects)
        written = list(write_split_dataset(out_dir / "data", data).values())
    except Exception as e:
        raise StageError("generate", str(e)) from e

    arch = arch if arch is not None else default_architecture(src.dim)
    log = None
    try:
        if isinstance(recipe, MetaConfig):
            config = replace(recipe, seed=run_seed)
            pretrained, log = meta_train(arch, config, data)
            log_path = out_dir / "run_log.tsv"
            log_path.write_text(log.to_tsv())
            written.append(log_path)
            kind = "meta"
        elif recipe == "plain":
            init_ss = np.random.SeedSequence(run_seed).spawn(3)[0]
            params = nets.init_params(arch, np.random.default_rng(init_ss))
            pretrained = TrainedModel(arch, params, Provenance({"baseline": "plain"}, run_seed))
            kind = "plain"
        else:
            pretrained = multitask_train(
                arch,
                TASKS,
                data,
                learning_rate=mt_rate,
                iterations=mt_iterations,
                rng=derive_stream(run_seed, 2),
            )
            kind = "multitask"
    except StageError:
        raise
    except Exception as e:
        raise StageError("meta-train", str(e)) from e

    try:
        final = fine_tune(pretrained, K5, data, ft, rng=derive_stream(run_seed, 1))
        ckpt_path = out_dir / "checkpoint.json"
        save_checkpoint(ckpt_path, final)
        written.append(ckpt_path)
    except Exception as e:
        raise StageError("fine-tune", str(e)) from e

    try:
        test = map_labels(K5, data.test)
        test_auc = compute_auc(infer(final, test.inputs), test.labels)
    except Exception as e:
        raise StageError("evaluate", str(e)) from e

    result = {
        "kind": kind,
        "data_seed": data_seed,
        "run_seed": run_seed,
        "test_auc": test_auc,
        "config": config_to_dict(recipe) if isinstance(recipe, MetaConfig) else {},
    }
    result_path = out_dir / "result.json"
    result_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    written.append(result_path)
    write_manifest(
        out_dir,
        written,
        config=result["config"] if result["config"] else {"pretrain": kind},
        seeds={"data_seed": data_seed, "run_seed": run_seed},
    )
    return result


# --- result tables --------------------------------------------------------------

@dataclass(frozen=True)
class CellKey:
    model: str
    meta_batch: int
    sampler: str


@dataclass(frozen=True)
class Cell:
    """Aggregate of one table cell: mean/std test AUC over completed repetitions."""

    mean: float | None = None
    std: float | None = None
    n: int = 0
    errors: tuple[str, ...] = ()
    na: bool = False

    def __post_init__(self):
        object.__setattr__(self, "errors", tuple(self.errors))


@dataclass(frozen=True)
class ResultTable:
    cells: tuple[tuple[CellKey, Cell], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        keys = [k for k, _ in self.cells]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate cell keys in result table")

    def cell(self, model: str, meta_batch: int, sampler: str) -> Cell:
        key = CellKey(model, meta_batch, sampler)
        for k, c in self.cells:
            if k == key:
                return c
        raise KeyError(key)

    def emit(self) -> str:
        doc = {
            "format": "curmeta-results-v1",
            "cells": [
                {
                    "model": k.model,
                    "meta_batch": k.meta_batch,
                    "sampler": k.sampler,
                    "mean": c.mean,
                    "std": c.std,
                    "n": c.n,
                    "errors": list(c.errors),
                    "na": c.na,
                }
                for k, c in self.cells
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        if doc.get("format") != "curmeta-results-v1":
            raise ValueError("not a curmeta results document")
        cells = tuple(
            (
                CellKey(d["model"], d["meta_batch"], d["sampler"]),
                Cell(d["mean"], d["std"], d["n"], tuple(d["errors"]), d["na"]),
            )
            for d in doc["cells"]
        )
        return cls(cells)

    def render_text(self) -> str:
        """Fixed-width text table: sampler columns for the meta grid, then baselines."""
        grid_rows = []  # (model, meta_batch) in first-appearance order
        samplers = []
        baselines = []
        for k, _ in self.cells:
            if k.sampler:
                if (k.model, k.meta_batch) not in grid_rows:
                    grid_rows.append((k.model, k.meta_batch))
                if k.sampler not in samplers:
                    samplers.append(k.sampler)
            else:
                baselines.append(k)

        def fmt(c: Cell) -> str:
            if c.na:
                return "N/A"
            if c.n == 0:
                return "failed"
            return f"{c.mean:.3f} +/- {c.std:.3f}"

        width = 18
        lines = []
        if grid_rows:
            header = ["model".ljust(16), "|K|".ljust(5)] + [s.ljust(width) for s in samplers]
            lines.append("".join(header).rstrip())
            for model, mb in grid_rows:
                row = [model.ljust(16), str(mb).ljust(5)]
                for s in samplers:
                    try:
                        row.append(fmt(self.cell(model, mb, s)).ljust(width))
                    except KeyError:
                        row.append("-".ljust(width))
                lines.append("".join(row).rstrip())
        if baselines:
            if lines:
                lines.append("")
            lines.append("baseline".ljust(21) + "test AUC")
            for k in baselines:
                lines.append(k.model.ljust(21) + fmt(self.cell(k.model, k.meta_batch, k.sampler)))
        return "\n".join(lines) + "\n"


# --- sweep plans ----------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    """One column of work in a sweep: a pretraining recipe mapped to a table cell."""

    label: str
    cell: CellKey
    meta: MetaConfig | None = None
    baseline: str = ""
    na: bool = False

    def __post_init__(self):
        ways = sum([self.meta is not None, bool(self.baseline), self.na])
        if ways != 1:
            raise ValueError(f"variant {self.label!r} must be exactly one of meta/baseline/na")
        if self.baseline and self.baseline not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.baseline!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    variants: tuple[Variant, ...]
    repetitions: int = 10
    data_seed: int = 0
    run_seed: int = 0
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)
    hidden: int = DEFAULT_HIDDEN
    n_subjects: int = 117
    mt_iterations: int = 3000
    mt_rate: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError("variant labels must be unique")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


GRID_SAMPLERS = (SamplerKind.RANDOM, SamplerKind.ALL_TASK, SamplerKind.MAB, SamplerKind.CL)


def default_plan(
    meta_updates: int = 3000,
    repetitions: int = 10,
    data_seed: int = 0,
    run_seed: int = 0,
    include_baselines: bool = True,
    mt_iterations: int | None = None,
) -> ExperimentPlan:
    """The full comparison grid.

    Meta-trained models with meta-batch 3 and 5 under every sampler, the
    no-target-task ablation (pool of four tasks, meta-batch 4), and the plain
    and multi-task baselines.  The all-task sampler is only defined when the
    meta-batch equals the pool size, so the meta-batch 3 cell is marked N/A.
    """
    variants = []
    for mb in (3, 5):
        for sk in GRID_SAMPLERS:
            cell = CellKey("BSML", mb, sk.value)
            label = f"bsml-k{mb}-{sk.value}"
            if sk is SamplerKind.ALL_TASK and mb != len(TASKS):
                variants.append(Variant(label, cell, na=True))
            else:
                variants.append(
                    Variant(
                        label,
                        cell,
                        meta=MetaConfig(
                            meta_updates=meta_updates, meta_batch_size=mb, sampler=sk
                        ),
                    )
                )
    ns_pool = len(TASKS) - 1
    for sk in GRID_SAMPLERS:
        variants.append(
            Variant(
                f"bsml-ns-k{ns_pool}-{sk.value}",
                CellKey("BSML-NS", ns_pool, sk.value),
                meta=MetaConfig(
                    meta_updates=meta_updates,
                    meta_batch_size=ns_pool,
                    sampler=sk,
                    exclude_target_task=True,
                ),
            )
        )
    if include_baselines:
        variants.append(Variant("plain", CellKey("Plain", 0, ""), baseline="plain"))
        variants.append(Variant("multitask", CellKey("Multi-task", 0, ""), baseline="multitask"))
    return ExperimentPlan(
        tuple(variants),
        repetitions=repetitions,
        data_seed=data_seed,
        run_seed=run_seed,
        mt_iterations=mt_iterations if mt_iterations is not None else meta_updates,
    )


def run_sweep(plan: ExperimentPlan, out_dir) -> ResultTable:
    """Run every variant of the plan serially and write results.json / results.txt.

    Repetition r uses data seed ``data_seed + r`` and run seed ``run_seed + r``
    for every variant, so comparisons across variants are paired.  A failing
    repetition is recorded in the cell's error list and does not abort the
    sweep.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for variant in plan.variants:
        if variant.na:
            cells.append((variant.cell, Cell(na=True)))
            continue
        aucs, errors = [], []
        for rep in range(plan.repetitions):
            run_dir = out_dir / "runs" / variant.label / f"rep{rep}"
            recipe = variant.meta if variant.meta is not None else variant.baseline
            try:
                result = run_pipeline(
                    recipe,
                    run_dir,
                    data_seed=plan.data_seed + rep,
                    run_seed=plan.run_seed + rep,
                    ft=plan.fine_tune,
                    arch=default_architecture(SourceConfig().dim, plan.hidden),
                    n_subjects=plan.n_subjects,
                    mt_iterations=plan.mt_iterations,
                    mt_rate=plan.mt_rate,
                )
                aucs.append(result["test_auc"])
            except StageError as e:
                errors.append(f"rep{rep}: {e}")
        if aucs:
            arr = np.asarray(aucs)
            cell = Cell(float(arr.mean()), float(arr.std(ddof=0)), len(aucs), tuple(errors))
        else:
            cell = Cell(None, None, 0, tuple(errors))
        cells.append((variant.cell, cell))

    table = ResultTable(tuple(cells))
    results_json = out_dir / "results.json"
    results_txt = out_dir / "results.txt"
    results_json.write_text(table.emit())
    results_txt.write_text(table.render_text())
    plan_doc = {
        "variants": [
            {
                "label": v.label,
                "cell": [v.cell.model, v.cell.meta_batch, v.cell.sampler],
                "meta": config_to_dict(v.meta) if v.meta is not None else None,
                "baseline": v.baseline,
                "na": v.na,
            }
            for v in plan.variants
        ],
        "repetitions": plan.repetitions,
        "fine_tune": config_to_dict(plan.fine_tune),
        "hidden": plan.hidden,
        "n_subjects": plan.n_subjects,
        "mt_iterations": plan.mt_iterations,
        "mt_rate": plan.mt_rate,
    }
    write_manifest(
        out_dir,
        [results_json, results_txt],
        config=plan_doc,
        seeds={"data_seed": plan.data_seed, "run_seed": plan.run_seed},
    )
    return table


# --- learning-curve extraction --------------------------------------------------

def emit_curves(log: RunLog, out_dir, window: int = 100) -> dict[str, Path]:
    """Write per-task observation curves and a selection histogram from a run log.

    task_curves.tsv has one row per sampled episode (iteration, task, AUC
    before and after adaptation, observation, reward).  sampling_histogram.tsv
    counts how often each task was selected per window of iterations.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if window < 1:
        raise ValueError("window must be >= 1")
    for r in log.records:
        n = len(r.tasks)
        if not (len(r.auc_before) == len(r.auc_after) == len(r.observations) == len(r.rewards) == n):
            raise ValueError(f"malformed run log: ragged record at iteration {r.iteration}")

    curves = out_dir / "task_curves.tsv"
    lines = ["iteration\ttask\tauc_before\tauc_after\tobservation\treward"]
    for r in log.records:
        for i, task in enumerate(r.tasks):
            lines.append(
                f"{r.iteration}\t{task}\t{r.auc_before[i]:.17g}\t{r.auc_after[i]:.17g}"
                f"\t{r.observations[i]:.17g}\t{r.rewards[i]:.17g}"
            )
    curves.write_text("\n".join(lines) + "\n")

    task_ids = sorted({t for r in log.records for t in r.tasks})
    hist = out_dir / "sampling_histogram.tsv"
    lines = ["\t".join(["window_start", "window_end", *task_ids])]
    if log.records:
        last = max(r.iteration for r in log.records)
        for start in range(1, last + 1, window):
            end = min(start + window - 1, last)
            counts = {t: 0 for t in task_ids}
            for r in log.records:
                if start <= r.iteration <= end:
                    for t in r.tasks:
                        counts[t] += 1
            lines.append(f"{start}\t{end}\t" + "\t".join(str(counts[t]) for t in task_ids))
    hist.write_text("\n".join(lines) + "\n")
    return {"task_curves": curves, "sampling_histogram": hist}
