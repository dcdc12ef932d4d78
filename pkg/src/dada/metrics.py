"""Event-aware evaluation: affiliation precision/recall, ROC AUC and the quantile-hit rule.

Affiliation metrics treat each timestamp ``t`` as the unit interval
``[t, t+1)``. The time axis is cut into one zone per ground-truth event
(boundaries halfway between consecutive events). Inside a zone, the
distance from each predicted point to the event (precision) and from each
event point to the nearest prediction (recall) is turned into a survival
probability against a prediction drawn uniformly from the zone, and those
probabilities are averaged. All integrals are evaluated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import NoGroundTruthEvents, SingleClass


@dataclass
class EvalReport:
    affiliation_p: float
    affiliation_r: float
    affiliation_f1: float
    auc_roc: Optional[float]
    counts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# -- events -----------------------------------------------------------------

def binary_to_events(y) -> list:
    """Maximal runs of ones as half-open ``(start, end)`` intervals."""
    y = np.asarray(y).astype(bool).astype(np.int8)
    d = np.diff(np.concatenate([[0], y, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def events_to_binary(events, T: int) -> np.ndarray:
    y = np.zeros(T, dtype=np.int64)
    for s, e in events:
        y[s:e] = 1
    return y


# -- affiliation ------------------------------------------------------------

def _int_pos(a: float, b: float, u: float, v: float) -> float:
    """Integral of ``max(0, a*x + b)`` over ``[u, v]``."""
    if v <= u:
        return 0.0
    if a == 0:
        return max(0.0, b) * (v - u)
    root = -b / a
    if a > 0:
        lo = max(u, root)
        hi = v
    else:
        lo = u
        hi = min(v, root)
    if hi <= lo:
        return 0.0
    return a * (hi * hi - lo * lo) / 2.0 + b * (hi - lo)


def zones(gt_events, T: float) -> list:
    """Affiliation zones: cuts halfway between consecutive ground-truth events."""
    cuts = [0.0]
    for (_, e0), (s1, _) in zip(gt_events[:-1], gt_events[1:]):
        cuts.append((e0 + s1) / 2.0)
    cuts.append(float(T))
    return list(zip(cuts[:-1], cuts[1:]))


def _clip(intervals, lo, hi) -> list:
    out = []
    for s, e in intervals:
        s2, e2 = max(s, lo), min(e, hi)
        if e2 > s2:
            out.append((s2, e2))
    return out


def _precision_integral(pieces, J, E) -> float:
    """Integral over predicted pieces of ``P(dist(X, J) >= dist(x, J))`` with ``X ~ U(E)``."""
    (a, b), (e0, e1) = J, E
    L, R, size = a - e0, e1 - b, e1 - e0
    total = 0.0
    for s, e in pieces:
        # inside the event the survival probability is 1
        total += max(0.0, min(e, b) - max(s, a))
        # left of the event: d = a - x, survival = (L - d)^+ + (R - d)^+
        u, v = s, min(e, a)
        if v > u:
            total += (_int_pos(1.0, L - a, u, v) + _int_pos(1.0, R - a, u, v)) / size
        # right of the event: d = x - b
        u, v = max(s, b), e
        if v > u:
            total += (_int_pos(-1.0, L + b, u, v) + _int_pos(-1.0, R + b, u, v)) / size
    return total


def _recall_integral(pieces, J, E) -> float:
    """Integral over the event of ``P(|X - y| >= dist(y, pred))`` with ``X ~ U(E)``."""
    (a, b), (e0, e1) = J, E
    size = e1 - e0
    pieces = sorted(pieces)
    # Voronoi cells of the prediction set restricted to J, each with its nearest anchor
    cells = []  # (u, v, kind, p): kind 0 inside prediction, +1 distance y - p, -1 distance p - y
    prev_end = None
    for i, (s, e) in enumerate(pieces):
        left_bound = -math.inf if prev_end is None else (prev_end + s) / 2.0
        if prev_end is not None:
            cells.append((prev_end, left_bound, +1, prev_end))
        cells.append((left_bound, s, -1, s))
        cells.append((s, e, 0, None))
        prev_end = e
    cells.append((prev_end, math.inf, +1, prev_end))

    total = 0.0
    for u, v, kind, p in cells:
        u, v = max(u, a), min(v, b)
        if v <= u:
            continue
        if kind == 0:
            total += v - u
        elif kind == +1:
            # d = y - p: (y - e0 - d)^+ = p - e0, (e1 - y - d)^+ = (e1 + p - 2y)^+
            total += ((p - e0) * (v - u) + _int_pos(-2.0, e1 + p, u, v)) / size
        else:
            # d = p - y: (2y - e0 - p)^+, (e1 - p)
            total += (_int_pos(2.0, -e0 - p, u, v) + (e1 - p) * (v - u)) / size
    return total


def affiliation_zone_probabilities(pred_events, gt_events, T: int):
    """Per-zone ``(precision, recall)``; precision is ``None`` for zones without predictions."""
    out = []
    for J, E in zip(gt_events, zones(gt_events, T)):
        pieces = _clip(pred_events, *E)
        if not pieces:
            out.append((None, 0.0))
            continue
        length = sum(e - s for s, e in pieces)
        p = _precision_integral(pieces, J, E) / length
        r = _recall_integral(pieces, J, E) / (J[1] - J[0])
        out.append((p, r))
    return out


def affiliation_prf(pred_events, gt_events, T: int):
    """Affiliation ``(precision, recall, f1)``.

    Precision averages over zones that contain predictions; with no
    predictions at all it is reported as 0.
    """
    gt_events = list(gt_events)
    if not gt_events:
        raise NoGroundTruthEvents("affiliation metrics need at least one ground-truth event")
    if T <= 0:
        raise ValueError("T must be positive")
    probs = affiliation_zone_probabilities(list(pred_events), gt_events, T)
    precisions = [p for p, _ in probs if p is not None]
    p = float(np.mean(precisions)) if precisions else 0.0
    r = float(np.mean([r for _, r in probs]))
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


# -- threshold-free metrics -------------------------------------------------

def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC; ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def quantile_hit(scores, gt_events, alpha: float) -> bool:
    """True iff one of the top ``ceil(alpha*T)`` scored timestamps falls inside an event."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    s = np.asarray(scores, dtype=np.float64)
    T = s.size
    n_top = int(math.ceil(alpha * T - 1e-9))
    top = np.argsort(-s, kind="stable")[:n_top]
    y = events_to_binary(gt_events, T)
    return bool(y[top].any())


def evaluate(scores, decisions, labels, alphas: Sequence[float] = ()) -> EvalReport:
    labels = np.asarray(labels).astype(np.int64)
    decisions = np.asarray(decisions).astype(np.int64)
    T = labels.size
    gt = binary_to_events(labels)
    pred = binary_to_events(decisions)
    flags = []
    if not pred:
        flags.append("empty_prediction")
    p, r, f1 = affiliation_prf(pred, gt, T)
    try:
        auc = auc_roc(scores, labels) if scores is not None else None
    except SingleClass:
        auc = None
        flags.append("single_class")
    counts = {
        "events": len(gt),
        "tp_events": sum(1 for s, e in gt if decisions[s:e].any()),
        "predicted_points": int(decisions.sum()),
        "predicted_events": len(pred),
    }
    if scores is not None:
        for a in alphas:
            counts[f"quantile_hit@{a:g}"] = quantile_hit(scores, gt, a)
    return EvalReport(p, r, f1, auc, counts, flags)
