"""Mask-variance anomaly scores and peaks-over-threshold (SPOT) calibration."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch
from scipy.optimize import brentq

from . import dataset as ds
from .mask import sample_masks
from .net import DADA, model_dtype


@dataclass(frozen=True)
class SpotConfig:
    q: float = 1e-3
    init_quantile: float = 0.98
    init_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if not 0 < self.init_quantile < 1:
            raise ValueError("init_quantile must lie in (0, 1)")
        if not 0 < self.init_fraction <= 1:
            raise ValueError("init_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SpotResult:
    threshold: float
    t0: float
    gamma: float
    sigma: float
    n_init: int
    n_excess: int
    method: str  # "grimshaw", "exponential", "moments" or "empirical"
    fallback: bool = False


@dataclass
class ScoreSeries:
    scores: np.ndarray
    threshold: Optional[float] = None
    decisions: Optional[np.ndarray] = None
    per_channel_scores: Optional[np.ndarray] = None
    spot: Optional[SpotResult] = None


# -- scoring ----------------------------------------------------------------

@torch.no_grad()
def reconstruct_pairs(model: DADA, windows: np.ndarray, n_pairs: int, rng: np.random.Generator,
                      mask_ratio: float = 0.5, chunk: int = 2048) -> np.ndarray:
    """Normal-decoder reconstructions under ``n_pairs`` fresh mask pairs: ``(n_pairs, N, W)``."""
    model.eval()
    dtype = model_dtype(model)
    N = windows.shape[0]
    P = model.cfg.n_patches
    masks = np.stack([sample_masks(N, P, mask_ratio, rng) for _ in range(n_pairs)])
    out = np.empty((n_pairs, N, windows.shape[1]))
    x_all = torch.as_tensor(windows, dtype=dtype)
    for j in range(n_pairs):
        m_all = torch.as_tensor(masks[j], dtype=dtype)
        for lo in range(0, N, chunk):
            r = model.reconstruct(x_all[lo : lo + chunk], m_all[lo : lo + chunk], train_mode=False)
            out[j, lo : lo + chunk] = r.double().numpy()
    return out


def pair_variance(recons: np.ndarray) -> np.ndarray:
    """Population variance across reconstructions (axis 0)."""
    return np.var(recons, axis=0)


def score_windows(model: DADA, batch: ds.WindowBatch, n_pairs: int = 5, seed: int = 0,
                  mask_ratio: float = 0.5) -> np.ndarray:
    """Per-point scores ``(N, W)`` in the windows' original units."""
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    if not batch.normalized:
        batch = ds.normalize(batch)
    rng = np.random.default_rng(seed)
    recons = reconstruct_pairs(model, batch.windows, n_pairs, rng, mask_ratio)
    # variance of de-normalized values = std^2 * variance of normalized values
    return pair_variance(recons) * (batch.stds[:, None] ** 2)


def score_window(window: np.ndarray, model: DADA, n_pairs: int = 5, seed: int = 0, mask_ratio: float = 0.5):
    batch = ds.normalize(ds.WindowBatch(windows=np.asarray(window, dtype=np.float64)[None, :]))
    return score_windows(model, batch, n_pairs, seed, mask_ratio)[0]


def score_series(ts: ds.TimeSeries, model: DADA, n_pairs: int = 5, seed: int = 0,
                 mask_ratio: float = 0.5) -> ScoreSeries:
    """Score every channel on non-overlapping windows; the series score is the channel mean."""
    W = model.cfg.window
    per_channel = np.empty((ts.T, ts.C))
    for cv in ds.split_channels(ts):
        batch = ds.make_windows(cv, W, W, mode="test")
        # same mask draws for every channel: duplicated channels score identically
        s = score_windows(model, batch, n_pairs, seed, mask_ratio)
        per_channel[:, cv.channel_index] = s.reshape(-1)[: ts.T]
    return ScoreSeries(scores=per_channel.mean(axis=1), per_channel_scores=per_channel)


# -- SPOT -------------------------------------------------------------------

def _gpd_loglik(y: np.ndarray, gamma: float, sigma: float) -> float:
    if sigma <= 0:
        return -math.inf
    if abs(gamma) < 1e-12:
        return -y.size * math.log(sigma) - y.sum() / sigma
    z = 1.0 + gamma * y / sigma
    if np.any(z <= 0):
        return -math.inf
    return -y.size * math.log(sigma) - (1.0 + 1.0 / gamma) * np.log(z).sum()


def _grimshaw_roots(y: np.ndarray, n_grid: int = 200) -> list:
    """Roots of ``u(x) v(x) - 1`` on both admissible intervals."""
    ymin, ymax, ymean = y.min(), y.max(), y.mean()

    def w(x):
        s = 1.0 + x * y
        return np.mean(1.0 / s) * (1.0 + np.mean(np.log(s))) - 1.0

    eps = 1e-8 / max(ymean, 1e-300)
    intervals = [(-1.0 / ymax + eps, -eps)]
    if ymin > 0:
        hi = 2.0 * (ymean - ymin) / (ymin * ymin)
        if hi > eps:
            intervals.append((eps, hi))
    roots = []
    for lo, hi in intervals:
        if not lo < hi:
            continue
        # linear plus geometric spacing: roots may sit many orders of magnitude
        # closer to zero than the interval bounds
        if lo > 0:
            geo = np.geomspace(lo, hi, n_grid)
        else:
            geo = -np.geomspace(-hi, -lo, n_grid)
        xs = np.unique(np.concatenate([np.linspace(lo, hi, n_grid), geo]))
        n_pts = xs.size
        vals = np.array([w(x) for x in xs])
        for i in range(n_pts - 1):
            a, b = vals[i], vals[i + 1]
            if not (np.isfinite(a) and np.isfinite(b)):
                continue
            if a == 0:
                roots.append(xs[i])
            elif a * b < 0:
                roots.append(brentq(w, xs[i], xs[i + 1], xtol=1e-14, maxiter=200))
    return roots


def fit_gpd(excesses: np.ndarray) -> tuple:
    """Maximum-likelihood GPD fit ``(gamma, sigma, method)``.

    Candidates are every Grimshaw root plus the exponential (gamma = 0)
    solution; the best likelihood wins. Falls back to moment estimates if no
    candidate has a finite likelihood.
    """
    y = np.asarray(excesses, dtype=np.float64)
    candidates = [(0.0, float(y.mean()), "exponential")]
    for x in _grimshaw_roots(y):
        gamma = float(np.mean(np.log1p(x * y)))
        if gamma != 0.0:
            candidates.append((gamma, gamma / x, "grimshaw"))
    scored = [(c, _gpd_loglik(y, c[0], c[1])) for c in candidates]
    scored = [(c, ll) for c, ll in scored if np.isfinite(ll) and c[1] > 0]
    if scored:
        return max(scored, key=lambda t: t[1])[0]
    mean, var = y.mean(), y.var()
    gamma = 0.5 * (1.0 - mean * mean / var)
    sigma = 0.5 * mean * (mean * mean / var + 1.0)
    return gamma, sigma, "moments"


def pot_quantile(t0: float, gamma: float, sigma: float, q: float, n: int, n_excess: int) -> float:
    r = q * n / n_excess
    if abs(gamma) < 1e-12:
        return t0 - sigma * math.log(r)
    return t0 + (sigma / gamma) * (r ** (-gamma) - 1.0)


def spot_threshold(init_scores, cfg: SpotConfig = SpotConfig()) -> SpotResult:
    """Peaks-over-threshold calibration of the decision threshold."""
    s = np.asarray(init_scores, dtype=np.float64).ravel()
    n = s.size
    t0 = float(np.quantile(s, cfg.init_quantile)) if n else 0.0
    excess = s[s > t0] - t0
    if n < 100 or excess.size < 10:
        warnings.warn(
            f"SPOT: insufficient excesses (n={n}, excesses={excess.size}); using empirical quantile",
            RuntimeWarning,
            stacklevel=2,
        )
        delta = float(np.quantile(s, 1.0 - cfg.q)) if n else 0.0
        return SpotResult(delta, t0, float("nan"), float("nan"), n, int(excess.size), "empirical", True)
    gamma, sigma, method = fit_gpd(excess)
    delta = pot_quantile(t0, gamma, sigma, cfg.q, n, excess.size)
    delta = max(delta, t0)
    return SpotResult(float(delta), t0, float(gamma), float(sigma), n, int(excess.size), method, method == "moments")


def detect(ss: ScoreSeries, delta: float) -> ScoreSeries:
    return replace(ss, threshold=float(delta), decisions=(ss.scores > delta).astype(np.int64))


def calibrate_and_detect(ss: ScoreSeries, cfg: SpotConfig = SpotConfig(),
                         calibration_scores: Optional[np.ndarray] = None) -> ScoreSeries:
    """Threshold ``ss`` with SPOT, calibrating on ``calibration_scores`` or the stream's leading fraction."""
    if calibration_scores is None:
        n_init = max(1, int(math.ceil(cfg.init_fraction * ss.scores.size)))
        calibration_scores = ss.scores[:n_init]
    res = spot_threshold(calibration_scores, cfg)
    out = detect(ss, res.threshold)
    out.spot = res
    return out
