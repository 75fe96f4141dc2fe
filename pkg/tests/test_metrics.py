"""Tests for ROC-AUC and the observation / reward signals built on it."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curmeta.metrics import (
    DegenerateAucError,
    Observation,
    Reward,
    compute_auc,
    observation,
    reward,
)
from oracles import concordance_auc


# -------------------------------------------------------------- hand cases


def test_auc_perfect_separation():
    assert compute_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_auc_reversed_separation():
    assert compute_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_auc_all_scores_tied():
    assert compute_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auc_partial_tie_hand_value():
    # pairs: (.9,.3)=1, (.8,.3)=1 twice at the tied positive, one tied pair at .8
    scores = [0.9, 0.8, 0.8, 0.3]
    labels = [1, 0, 1, 0]
    assert compute_auc(scores, labels) == pytest.approx(0.875, abs=1e-15)


def test_auc_single_pair():
    assert compute_auc([0.2, 0.7], [0, 1]) == 1.0
    assert compute_auc([0.7, 0.2], [0, 1]) == 0.0
    assert compute_auc([0.4, 0.4], [0, 1]) == 0.5


def test_auc_order_invariant(rng):
    scores = rng.normal(size=30)
    labels = rng.integers(0, 2, size=30)
    labels[:2] = [0, 1]
    perm = rng.permutation(30)
    assert compute_auc(scores, labels) == pytest.approx(
        compute_auc(scores[perm], labels[perm]), abs=1e-15
    )


# ------------------------------------------------------------- degeneracy


def test_auc_rejects_single_class():
    with pytest.raises(DegenerateAucError):
        compute_auc([0.1, 0.9], [1, 1])
    with pytest.raises(DegenerateAucError):
        compute_auc([0.1, 0.9], [0, 0])


def test_degenerate_error_is_a_value_error():
    assert issubclass(DegenerateAucError, ValueError)


def test_auc_rejects_bad_inputs():
    with pytest.raises(ValueError):
        compute_auc([0.1, 0.9], [0, 1, 1])
    with pytest.raises(ValueError):
        compute_auc([0.1, 0.9], [0, 2])


# ----------------------------------------------------- agreement with pairs


def test_auc_matches_concordance_on_tied_instances():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 50))
        # coarse grid scores force plenty of exact ties
        scores = rng.integers(0, 6, size=n) / 5.0
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(compute_auc(scores, labels) - concordance_auc(scores, labels)) < 1e-12


# ------------------------------------------------------ observation / reward


def test_observation_value_range():
    assert Observation(0.0).value == 0.0
    assert Observation(1.0).value == 1.0
    assert Observation(-1.0).value == -1.0
    with pytest.raises(ValueError):
        Observation(1.5)
    with pytest.raises(ValueError):
        Observation(-1.5)


def test_reward_value_range():
    assert Reward(2.0).value == 2.0
    assert Reward(-2.0).value == -2.0
    with pytest.raises(ValueError):
        Reward(2.5)
    with pytest.raises(ValueError):
        Reward(-2.5)


def test_observation_is_after_minus_before():
    obs = observation(0.8, 0.6)
    assert obs.value == pytest.approx(0.2, abs=1e-15)
    assert observation(0.3, 0.9).value == pytest.approx(-0.6, abs=1e-15)


def test_observation_validates_auc_inputs():
    with pytest.raises(ValueError):
        observation(1.2, 0.5)
    with pytest.raises(ValueError):
        observation(0.5, -0.1)


def test_reward_is_observation_difference():
    r = reward(Observation(0.4), Observation(-0.3))
    assert r.value == pytest.approx(0.7, abs=1e-15)


def test_reward_extremes_allowed():
    # best-to-worst swing spans the full [-2, 2] interval
    assert reward(Observation(1.0), Observation(-1.0)).value == 2.0
    assert reward(Observation(-1.0), Observation(1.0)).value == -2.0


# ------------------------------------------------------------ property based


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 40))
def test_auc_bounds_and_complement(seed, n):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 8, size=n) / 7.0
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    auc = compute_auc(scores, labels)
    assert 0.0 <= auc <= 1.0
    assert compute_auc(scores, 1 - labels) == pytest.approx(1.0 - auc, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    scores = rng.normal(size=n)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    auc = compute_auc(scores, labels)
    assert compute_auc(3.0 * scores + 5.0, labels) == pytest.approx(auc, abs=1e-12)
    assert compute_auc(np.exp(scores), labels) == pytest.approx(auc, abs=1e-12)
