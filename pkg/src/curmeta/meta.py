"""Meta-training across tasks, fine-tuning on the target task, and inference.

The meta-update treats the current parameters as an initialization: each
sampled task adapts it with a few full-batch gradient steps on its support
set, and the initialization then descends the gradient of the summed
post-adaptation query losses.  In second-order mode that gradient is exact,
obtained by running Hessian-vector products backwards along the unrolled
adaptation trajectory; first-order mode simply evaluates the query gradient
at the adapted parameters.

Checkpoints are JSON documents carrying the architecture, the flat parameter
vector in hexadecimal float encoding (bit-exact round trip), the producing
config and the seed.  Run logs are TSV, one record per meta-update.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import nets
from .metrics import compute_auc
from .nets import Architecture, Batch, ParamVector
from .samplers import SamplerKind, SamplerState, record_outcome, select_batch
from .tasks import (
    K5,
    PoolExhaustedError,
    SplitDataset,
    TASKS,
    TaskDefinition,
    map_labels,
    sample_episode,
)


class GradientMode(str, Enum):
    SECOND = "second"
    FIRST = "first"


@dataclass(frozen=True)
class MetaConfig:
    """All hyperparameters of the meta-training phase."""

    adaptation_rate: float = 0.1
    meta_rate: float = 0.001
    meta_updates: int = 3000
    inner_steps: int = 5
    n_tr: int = 4
    n_val: int = 4
    meta_batch_size: int = 5
    sampler: SamplerKind = SamplerKind.RANDOM
    gradient_mode: GradientMode = GradientMode.SECOND
    exclude_target_task: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sampler", SamplerKind(self.sampler))
        object.__setattr__(self, "gradient_mode", GradientMode(self.gradient_mode))
        if self.adaptation_rate < 0 or self.meta_rate < 0:
            raise ValueError("learning rates must be >= 0")
        if self.meta_updates < 0:
            raise ValueError(f"meta_updates must be >= 0, got {self.meta_updates}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.n_tr < 2 or self.n_val < 2:
            raise ValueError("n_tr and n_val must be >= 2 (both labels per set)")
        if self.meta_batch_size < 1:
            raise ValueError(f"meta_batch_size must be >= 1, got {self.meta_batch_size}")


@dataclass(frozen=True)
class FineTuneConfig:
    """Mini-batch training of the target task with validation-AUC snapshotting."""

    learning_rate: float = 0.01
    batch_size: int = 2
    epochs: int = 200

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class Provenance:
    """How a model came to be: producing config, seed, and run-log content hash."""

    config: dict = field(default_factory=dict)
    seed: int = 0
    log_hash: str = ""


@dataclass(frozen=True)
class TrainedModel:
    arch: Architecture
    params: ParamVector
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (self.arch.param_count,):
            raise ValueError(
                f"params shape {params.shape} does not match architecture "
                f"({self.arch.param_count} parameters)"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("model parameters contain NaN or Inf")
        object.__setattr__(self, "params", params)


class NetLoss:
    """Cross-entropy objective of a net, exposed as loss/grad/Hessian-vector callables.

    Anything with this interface can drive the adaptation and meta-gradient
    machinery; tests use closed-form objectives the same way.
    """

    def __init__(self, arch: Architecture):
        self.arch = arch

    def loss(self, params: ParamVector, batch: Batch) -> float:
        return nets.batch_loss(self.arch, params, batch)

    def grad(self, params: ParamVector, batch: Batch) -> ParamVector:
        return nets.grad(self.arch, params, batch)

    def hvp(self, params: ParamVector, batch: Batch, v: ParamVector) -> ParamVector:
        return nets.hessian_vector_product(self.arch, params, batch, v)


def _unroll(objective, params, support, alpha, steps):
    """Adaptation trajectory [theta_0, ..., theta_steps] on the support loss."""
    if steps < 1:
        raise ValueError(f"need at least one adaptation step, got {steps}")
    trajectory = [np.asarray(params, dtype=np.float64).copy()]
    for _ in range(steps):
        theta = trajectory[-1]
        trajectory.append(theta - alpha * objective.grad(theta, support))
    return trajectory


def inner_adapt(objective, params: ParamVector, support: Batch, alpha: float, steps: int) -> ParamVector:
    """``steps`` full-batch gradient steps on the support loss; input untouched."""
    return _unroll(objective, params, support, alpha, steps)[-1]


def _episode_meta_gradient(objective, trajectory, support, query, alpha, mode):
    adapted = trajectory[-1]
    v = objective.grad(adapted, query)
    if mode is GradientMode.FIRST:
        return v
    # reverse sweep through theta_{k+1} = theta_k - alpha * g(theta_k):
    # v <- (I - alpha * H(theta_k)) v at every inner step
    for theta in reversed(trajectory[:-1]):
        v = v - alpha * objective.hvp(theta, support, v)
    return v


def meta_gradient(
    objective,
    params: ParamVector,
    episodes,
    alpha: float,
    steps: int,
    mode: GradientMode = GradientMode.SECOND,
) -> ParamVector:
    """Gradient w.r.t. the initialization of the summed post-adaptation query losses.

    Episodes are processed and accumulated in the given order.
    """
    mode = GradientMode(mode)
    episodes = list(episodes)
    if not episodes:
        raise ValueError("meta_gradient needs at least one episode")
    total = np.zeros_like(np.asarray(params, dtype=np.float64))
    for ep in episodes:
        trajectory = _unroll(objective, params, ep.support, alpha, steps)
        total += _episode_meta_gradient(objective, trajectory, ep.support, ep.query, alpha, mode)
    return total


def positive_probability(arch: Architecture, params: ParamVector, inputs) -> np.ndarray:
    """Softmax probability of class 1 per sample."""
    return nets.softmax(nets.forward(arch, params, inputs))[:, 1]


def infer(model: TrainedModel, inputs) -> np.ndarray:
    """Probability of the positive class for each input row."""
    return positive_probability(model.arch, model.params, inputs)


# --- run log --------------------------------------------------------------------

LOG_COLUMNS = (
    "iteration",
    "sampler",
    "tasks",
    "auc_before",
    "auc_after",
    "observation",
    "reward",
    "grad_norm",
)


@dataclass(frozen=True)
class MetaUpdateRecord:
    """One meta-update: the sampled tasks and their per-episode outcomes."""

    iteration: int
    sampler: str
    tasks: tuple[str, ...]
    auc_before: tuple[float, ...]
    auc_after: tuple[float, ...]
    observations: tuple[float, ...]
    rewards: tuple[float, ...]
    grad_norm: float


@dataclass(frozen=True)
class RunLog:
    records: tuple[MetaUpdateRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def to_tsv(self) -> str:
        lines = ["\t".join(LOG_COLUMNS)]
        for r in self.records:
            lines.append(
                "\t".join(
                    [
                        str(r.iteration),
                        r.sampler,
                        ",".join(r.tasks),
                        ",".join(f"{x:.17g}" for x in r.auc_before),
                        ",".join(f"{x:.17g}" for x in r.auc_after),
                        ",".join(f"{x:.17g}" for x in r.observations),
                        ",".join(f"{x:.17g}" for x in r.rewards),
                        f"{r.grad_norm:.17g}",
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "RunLog":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or lines[0] != "\t".join(LOG_COLUMNS):
            raise ValueError("malformed run log: bad or missing header")
        records = []
        for ln, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            if len(parts) != len(LOG_COLUMNS):
                raise ValueError(f"malformed run log: line {ln} has {len(parts)} fields")
            floats = lambda s: tuple(float(x) for x in s.split(",")) if s else ()
            records.append(
                MetaUpdateRecord(
                    iteration=int(parts[0]),
                    sampler=parts[1],
                    tasks=tuple(parts[2].split(",")) if parts[2] else (),
                    auc_before=floats(parts[3]),
                    auc_after=floats(parts[4]),
                    observations=floats(parts[5]),
                    rewards=floats(parts[6]),
                    grad_norm=float(parts[7]),
                )
            )
        return cls(tuple(records))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_tsv().encode()).hexdigest()


# --- meta-training --------------------------------------------------------------

def config_to_dict(config) -> dict:
    d = asdict(config)
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in d.items()}


def meta_train(
    arch: Architecture,
    config: MetaConfig,
    data: SplitDataset,
    task_pool=None,
    sampler: SamplerState | None = None,
) -> tuple[TrainedModel, RunLog]:
    """Run ``config.meta_updates`` meta-updates and return the trained initialization.

    Each iteration samples a meta-batch of tasks, draws one episode per task
    from the training split, adapts per task, meta-updates the initialization,
    and records the pre/post-adaptation query AUC of every episode with the
    sampler.  Deterministic given the config seed (the default sampler and all
    episode draws derive their streams from it).
    """
    pool = list(task_pool if task_pool is not None else TASKS)
    if config.exclude_target_task:
        pool = [t for t in pool if t.id != K5.id]
    if not pool:
        raise ValueError("task pool is empty after exclusions")

    init_ss, episode_ss, sampler_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = nets.init_params(arch, np.random.default_rng(init_ss))
    episode_rng = np.random.default_rng(episode_ss)
    if sampler is None:
        sampler = SamplerState(config.sampler, rng=np.random.default_rng(sampler_ss))
    objective = NetLoss(arch)

    records = []
    for iteration in range(1, config.meta_updates + 1):
        batch = select_batch(sampler, pool, config.meta_batch_size)
        episodes = []
        for task in batch:
            try:
                episodes.append(
                    sample_episode(task, data.train, config.n_tr, config.n_val, episode_rng)
                )
            except PoolExhaustedError as e:
                raise PoolExhaustedError(
                    f"meta-update {iteration}, task {task.id}: {e}"
                ) from e

        grad_total = np.zeros_like(params)
        auc_before, auc_after = [], []
        for ep in episodes:
            trajectory = _unroll(
                objective, params, ep.support, config.adaptation_rate, config.inner_steps
            )
            before = compute_auc(
                positive_probability(arch, params, ep.query.inputs), ep.query.labels
            )
            after = compute_auc(
                positive_probability(arch, trajectory[-1], ep.query.inputs), ep.query.labels
            )
            auc_before.append(before)
            auc_after.append(after)
            grad_total += _episode_meta_gradient(
                objective,
                trajectory,
                ep.support,
                ep.query,
                config.adaptation_rate,
                config.gradient_mode,
            )

        params = params - config.meta_rate * grad_total
        if not np.all(np.isfinite(params)):
            raise FloatingPointError(f"non-finite parameters after meta-update {iteration}")

        observations, rewards = [], []
        for task, before, after in zip(batch, auc_before, auc_after):
            outcome = record_outcome(sampler, task, before, after)
            observations.append(outcome.observation)
            rewards.append(outcome.reward)

        records.append(
            MetaUpdateRecord(
                iteration=iteration,
                sampler=sampler.kind.value,
                tasks=tuple(t.id for t in batch),
                auc_before=tuple(auc_before),
                auc_after=tuple(auc_after),
                observations=tuple(observations),
                rewards=tuple(rewards),
                grad_norm=float(np.linalg.norm(grad_total)),
            )
        )

    log = RunLog(tuple(records))
    model = TrainedModel(
        arch, params, Provenance(config_to_dict(config), config.seed, log.content_hash())
    )
    return model, log


# --- fine-tuning and baselines --------------------------------------------------

def fine_tune(
    model: TrainedModel,
    target_task: TaskDefinition,
    data: SplitDataset,
    config: FineTuneConfig,
    rng=0,
) -> TrainedModel:
    """Mini-batch gradient descent on the mapped training split.

    Returns the parameter snapshot with the highest validation AUC over all
    epochs, including epoch 0 (the untouched input model), so the result is
    never worse than the start on validation.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    train = map_labels(target_task, data.train)
    val = map_labels(target_task, data.validation)
    arch = model.arch

    def val_auc(p):
        return compute_auc(positive_probability(arch, p, val.inputs), val.labels)

    params = model.params.copy()
    best_params, best_auc = params.copy(), val_auc(params)
    n = len(train)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            mini = Batch(train.inputs[idx], train.labels[idx])
            params = params - config.learning_rate * nets.grad(arch, params, mini)
        if not np.all(np.isfinite(params)):
            raise FloatingPointError("non-finite parameters during fine-tuning")
        auc = val_auc(params)
        if auc > best_auc:
            best_auc, best_params = auc, params.copy()

    provenance = Provenance(
        config={**model.provenance.config, "fine_tune": config_to_dict(config)},
        seed=model.provenance.seed,
        log_hash=model.provenance.log_hash,
    )
    return TrainedModel(arch, best_params, provenance)


def _head_length(arch: Architecture) -> int:
    return (arch.layer_widths[-2] + 1) * arch.layer_widths[-1]


def multitask_train(
    arch: Architecture,
    task_pool,
    data: SplitDataset,
    learning_rate: float,
    iterations: int,
    batch_size: int = 4,
    rng=0,
    target_task: TaskDefinition = K5,
) -> TrainedModel:
    """Joint training baseline: shared trunk, one output head per task.

    Every iteration samples one batch per task and descends the summed
    cross-entropy losses; the trunk accumulates all task gradients, each head
    only its own.  The returned model is trunk plus the target task's head.
    """
    pool = list(task_pool)
    if not pool:
        raise ValueError("task pool is empty")
    if target_task not in pool:
        raise ValueError(f"target task {target_task.id} not in the pool")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    head_len = _head_length(arch)
    trunk_len = arch.param_count - head_len
    first = nets.init_params(arch, rng)
    trunk = first[:trunk_len].copy()
    heads = {pool[0].id: first[trunk_len:].copy()}
    head_scale = 1.0 / np.sqrt(arch.layer_widths[-2])
    for task in pool[1:]:
        heads[task.id] = rng.uniform(-head_scale, head_scale, size=head_len)

    mapped = {task.id: map_labels(task, data.train) for task in pool}
    for _ in range(iterations):
        trunk_grad = np.zeros(trunk_len)
        for task in pool:
            full_batch = mapped[task.id]
            n = len(full_batch)
            idx = rng.choice(n, size=min(batch_size, n), replace=n < batch_size)
            mini = Batch(full_batch.inputs[idx], full_batch.labels[idx])
            g = nets.grad(arch, np.concatenate([trunk, heads[task.id]]), mini)
            trunk_grad += g[:trunk_len]
            heads[task.id] = heads[task.id] - learning_rate * g[trunk_len:]
        trunk = trunk - learning_rate * trunk_grad
        if not np.all(np.isfinite(trunk)):
            raise FloatingPointError("non-finite parameters during multi-task training")

    params = np.concatenate([trunk, heads[target_task.id]])
    return TrainedModel(arch, params, Provenance({"baseline": "multitask"}, 0, ""))


# --- checkpoints ----------------------------------------------------------------

CHECKPOINT_FORMAT = "curmeta-checkpoint-v1"


def save_checkpoint(path, model: TrainedModel) -> None:
    """Write a self-describing JSON checkpoint with bit-exact parameters."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": {
            "layer_widths": list(model.arch.layer_widths),
            "activation": model.arch.activation,
        },
        "params_hex": [float(x).hex() for x in model.params],
        "config": model.provenance.config,
        "seed": model.provenance.seed,
        "log_hash": model.provenance.log_hash,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    arch = Architecture(
        tuple(doc["architecture"]["layer_widths"]), doc["architecture"]["activation"]
    )
    params = np.array([float.fromhex(x) for x in doc["params_hex"]])
    return TrainedModel(
        arch, params, Provenance(doc.get("config", {}), doc.get("seed", 0), doc.get("log_hash", ""))
    )
