"""ROC-AUC and the observation/reward quantities that drive task sampling.

AUC is computed as the trapezoidal area under the ROC curve built over tie
groups, which equals the probability that a random positive outscores a random
negative with ties counting one half.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateAucError(ValueError):
    """AUC requested for a single-class label set."""


@dataclass(frozen=True)
class Observation:
    """AUC improvement of one adaptation: after minus before, in [-1, 1]."""

    value: float

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise ValueError(f"observation {self.value} outside [-1, 1]")


@dataclass(frozen=True)
class Reward:
    """Change in a task's observation since it was last sampled, in [-2, 2]."""

    value: float

    def __post_init__(self):
        if not -2.0 <= self.value <= 2.0:
            raise ValueError(f"reward {self.value} outside [-2, 2]")


def compute_auc(scores, labels) -> float:
    """Area under the ROC curve of ``scores`` against binary ``labels``.

    Ties are handled by grouping equal scores and joining the resulting ROC
    points with trapezoids (equivalently: tied positive-negative pairs count
    one half).  Raises DegenerateAucError unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores and labels must have equal length, got {scores.shape} vs {labels.shape}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateAucError(
            f"degenerate AUC: need both classes, got {n_pos} positives and {n_neg} negatives"
        )

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # one group per distinct score, descending
    starts = np.r_[True, s[1:] != s[:-1]]
    group = np.cumsum(starts) - 1
    tp_g = np.bincount(group, weights=y)
    fp_g = np.bincount(group, weights=1 - y)
    tp = np.cumsum(tp_g)
    tp_prev = tp - tp_g
    area = float(np.sum(fp_g * (tp_prev + tp)) / 2.0)
    return area / (n_pos * n_neg)


def observation(auc_after: float, auc_before: float) -> Observation:
    """AUC improvement from before to after one adaptation."""
    for name, value in (("auc_after", auc_after), ("auc_before", auc_before)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name}={value} outside [0, 1]")
    return Observation(auc_after - auc_before)


def reward(current: Observation, previous: Observation) -> Reward:
    """Improvement-of-improvement: current observation minus the previous one."""
    return Reward(current.value - previous.value)
