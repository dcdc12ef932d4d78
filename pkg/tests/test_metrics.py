import json
from itertools import product
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dada import metrics as mt
from dada.errors import NoGroundTruthEvents, SingleClass

GOLDEN = Path(__file__).parent / "golden" / "affiliation.json"


def test_binary_to_events():
    assert mt.binary_to_events([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert mt.binary_to_events([0, 0, 0]) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
def test_events_round_trip(y):
    ev = mt.binary_to_events(y)
    np.testing.assert_array_equal(mt.events_to_binary(ev, len(y)), y)
    assert mt.binary_to_events(mt.events_to_binary(ev, len(y))) == ev


def test_affiliation_perfect_and_empty():
    gt = [(40, 60)]
    assert mt.affiliation_prf(gt, gt, 100) == (1.0, 1.0, 1.0)
    assert mt.affiliation_prf([], gt, 100) == (0.0, 0.0, 0.0)
    with pytest.raises(NoGroundTruthEvents):
        mt.affiliation_prf([(1, 2)], [], 10)


def test_affiliation_matches_frozen_oracle():
    cases = json.loads(GOLDEN.read_text())
    assert len(cases) == 50
    for c in cases:
        p, r, f1 = mt.affiliation_prf(mt.binary_to_events(c["pred"]), mt.binary_to_events(c["gt"]), c["T"])
        assert abs(p - c["p"]) < 1e-6 and abs(r - c["r"]) < 1e-6 and abs(f1 - c["f1"]) < 1e-6


def test_inner_prediction_case():
    # prediction strictly inside the event: precision 1, recall below 1
    p, r, _ = mt.affiliation_prf([(45, 55)], [(40, 60)], 100)
    assert p == 1.0 and 0.9 < r < 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=5, max_size=60), st.lists(st.integers(0, 1), min_size=5, max_size=60))
def test_f1_is_one_iff_identical(gt, pred):
    n = min(len(gt), len(pred))
    gt, pred = gt[:n], pred[:n]
    if not any(gt):
        return
    _, _, f1 = mt.affiliation_prf(mt.binary_to_events(pred), mt.binary_to_events(gt), n)
    assert (abs(f1 - 1.0) < 1e-12) == (gt == pred)
    assert 0.0 <= f1 <= 1.0


def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((a > b) + 0.5 * (a == b) for a, b in product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_cases():
    assert mt.auc_roc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0
    assert mt.auc_roc([1.0] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    with pytest.raises(SingleClass):
        mt.auc_roc([1, 2], [1, 1])


def test_auc_brute_force_200():
    rng = np.random.default_rng(0)
    s = np.round(rng.normal(size=200), 1)  # rounding forces ties
    y = (rng.random(200) < 0.3).astype(int)
    assert mt.auc_roc(s, y) == brute_auc(s, y)


def test_auc_monotone_invariance():
    rng = np.random.default_rng(1)
    s = rng.normal(size=300)
    y = (rng.random(300) < 0.2).astype(int)
    assert mt.auc_roc(s, y) == mt.auc_roc(np.exp(3 * s) + 7, y)


def test_quantile_hit_cases():
    T = 100
    s = np.zeros(T)
    s[37] = 5.0
    assert mt.quantile_hit(s, [(37, 38)], 1 / T)
    assert mt.quantile_hit(np.random.default_rng(0).normal(size=T), [(90, 91)], 1.0)
    ramp_in = -np.abs(np.arange(T) - 50.0)
    assert mt.quantile_hit(ramp_in, [(48, 53)], 0.03)
    ramp_out = -np.abs(np.arange(T) - 10.0)
    assert not mt.quantile_hit(ramp_out, [(48, 53)], 0.03)
    with pytest.raises(ValueError):
        mt.quantile_hit(s, [(1, 2)], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_quantile_hit_monotone(seed, alpha):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=200)
    gt = [(int(a), int(a) + 5) for a in rng.integers(0, 195, size=2)]
    gt = mt.binary_to_events(mt.events_to_binary(gt, 200))
    if mt.quantile_hit(s, gt, alpha):
        assert mt.quantile_hit(s, gt, min(1.0, alpha * 1.5))


def test_evaluate_report():
    y = np.zeros(100, int)
    y[20:30] = 1
    y[70:75] = 1
    rep = mt.evaluate(y.astype(float), y, y, alphas=(0.05,))
    assert (rep.affiliation_p, rep.affiliation_r, rep.affiliation_f1, rep.auc_roc) == (1.0, 1.0, 1.0, 1.0)
    assert rep.counts["events"] == 2 and rep.counts["tp_events"] == 2
    assert rep.counts["predicted_points"] == 15 and rep.counts["quantile_hit@0.05"] is True
    assert rep.flags == []
    empty = mt.evaluate(None, np.zeros(100, int), y)
    assert empty.affiliation_f1 == 0.0 and "empty_prediction" in empty.flags and empty.auc_roc is None
    json.dumps(rep.to_dict())
