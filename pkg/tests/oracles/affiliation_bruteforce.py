"""Brute-force affiliation metrics, written independently of ``dada.metrics``.

Each timestamp t stands for the interval [t, t+1). Outer integrals are
midpoint sums on a grid of step 1/16; every kink of the integrands sits on
a multiple of 1/4, so the sums are exact up to rounding. Inner
probabilities are the measures of the sets {X in zone : distance >= d},
written out directly as interval lengths.
"""

import numpy as np

STEP = 1.0 / 16.0


def runs(y):
    out, start = [], None
    for t, v in enumerate(list(y) + [0]):
        if v and start is None:
            start = t
        elif not v and start is not None:
            out.append((start, t))
            start = None
    return out


def grid(lo, hi):
    n = int(round((hi - lo) / STEP))
    return lo + (np.arange(n) + 0.5) * STEP


def dist_to_intervals(x, intervals):
    d = np.full(x.shape, np.inf)
    for s, e in intervals:
        d = np.minimum(d, np.maximum(0.0, np.maximum(s - x, x - e)))
    return d


def affiliation(pred_binary, gt_binary):
    T = len(gt_binary)
    gt = runs(gt_binary)
    pred = runs(pred_binary)
    cuts = [0.0] + [(gt[i][1] + gt[i + 1][0]) / 2.0 for i in range(len(gt) - 1)] + [float(T)]
    precisions, recalls = [], []
    for (a, b), e0, e1 in zip(gt, cuts[:-1], cuts[1:]):
        size = e1 - e0
        xs = grid(e0, e1)
        in_pred = np.array([any(s <= x < e for s, e in pred) for x in xs], bool)
        if in_pred.any():
            xp = xs[in_pred]
            d = np.maximum(0.0, np.maximum(a - xp, xp - b))
            surv = (np.maximum(0.0, (a - d) - e0) + np.maximum(0.0, e1 - (b + d))) / size
            # distance >= 0 holds for the whole zone, event included
            surv[d == 0.0] = 1.0
            precisions.append(surv.mean())
            ys = grid(a, b)
            dy = dist_to_intervals(ys, [(max(s, e0), min(e, e1)) for s, e in pred if min(e, e1) > max(s, e0)])
            surv_r = (np.maximum(0.0, (ys - dy) - e0) + np.maximum(0.0, e1 - (ys + dy))) / size
            recalls.append(surv_r.mean())
        else:
            recalls.append(0.0)
    p = float(np.mean(precisions)) if precisions else 0.0
    r = float(np.mean(recalls))
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1
