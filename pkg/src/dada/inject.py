"""Synthetic anomaly injection.

Eight segment operators plus the loop that corrupts random, non-overlapping
subsequences of a clean series until a target anomaly ratio is reached.
Every operator preserves segment length so labels stay aligned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import RetryBudgetExhausted, SeriesTooShort

ANOMALY_TYPES = ("hmirror", "vmirror", "scale", "outlier", "noise", "compress", "stretch", "pattern")


@dataclass(frozen=True)
class InjectionSpec:
    types: tuple = ANOMALY_TYPES
    target_ratio: float = 0.05
    subseq_len_range: tuple = (20, 100)
    scale_factor_ranges: tuple = ((0.2, 0.5), (2.0, 5.0))
    noise_sigma_range: tuple = (0.3, 1.0)
    outlier_magnitude_range: tuple = (3.0, 6.0)
    outlier_points_range: tuple = (1, 5)
    warp_factors: tuple = (2, 3, 4)
    seed: int = 0

    def __post_init__(self):
        types = tuple(self.types)
        object.__setattr__(self, "types", types)
        if not types:
            raise ValueError("types must be non-empty")
        bad = set(types) - set(ANOMALY_TYPES)
        if bad:
            raise ValueError(f"unknown anomaly types {sorted(bad)}")
        if not 0.0 < self.target_ratio < 1.0:
            raise ValueError("target_ratio must lie in (0, 1)")
        for name in ("subseq_len_range", "noise_sigma_range", "outlier_magnitude_range", "outlier_points_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min > max")
        if self.subseq_len_range[0] < 1:
            raise ValueError("subsequences must have length >= 1")
        if not self.scale_factor_ranges or any(lo > hi for lo, hi in self.scale_factor_ranges):
            raise ValueError("scale_factor_ranges must be non-empty (lo, hi) pairs")
        if not self.warp_factors or min(self.warp_factors) < 1:
            raise ValueError("warp_factors must be positive integers")

    def to_dict(self) -> dict:
        return {
            "types": list(self.types),
            "target_ratio": self.target_ratio,
            "subseq_len_range": list(self.subseq_len_range),
            "scale_factor_ranges": [list(r) for r in self.scale_factor_ranges],
            "noise_sigma_range": list(self.noise_sigma_range),
            "outlier_magnitude_range": list(self.outlier_magnitude_range),
            "outlier_points_range": list(self.outlier_points_range),
            "warp_factors": list(self.warp_factors),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionSpec":
        d = dict(d)
        for key in ("subseq_len_range", "noise_sigma_range", "outlier_magnitude_range", "outlier_points_range"):
            if key in d:
                d[key] = tuple(d[key])
        if "scale_factor_ranges" in d:
            d["scale_factor_ranges"] = tuple(tuple(r) for r in d["scale_factor_ranges"])
        if "warp_factors" in d:
            d["warp_factors"] = tuple(int(f) for f in d["warp_factors"])
        return cls(**d)


@dataclass
class InjectionResult:
    values: np.ndarray
    labels: np.ndarray
    log: list = field(default_factory=list)  # (type, start, end, params)


# -- segment operators ------------------------------------------------------

def apply_hmirror(seg):
    return np.asarray(seg, dtype=np.float64)[::-1].copy()


def apply_vmirror(seg):
    seg = np.asarray(seg, dtype=np.float64)
    return 2.0 * seg.mean() - seg


def apply_scale(seg, factor):
    seg = np.asarray(seg, dtype=np.float64)
    mu = seg.mean()
    return mu + factor * (seg - mu)


def apply_outlier(seg, magnitude, n_points, rng: np.random.Generator):
    seg = np.asarray(seg, dtype=np.float64).copy()
    n_points = min(int(n_points), seg.size)
    idx = rng.choice(seg.size, size=n_points, replace=False)
    signs = rng.choice((-1.0, 1.0), size=n_points)
    seg[idx] += signs * magnitude * seg.std()
    return seg


def apply_noise(seg, sigma, rng: np.random.Generator):
    seg = np.asarray(seg, dtype=np.float64)
    return seg + rng.normal(0.0, 1.0, size=seg.size) * (sigma * seg.std())


def apply_pattern(seg, donor):
    donor = np.asarray(donor, dtype=np.float64)
    if donor.shape != np.shape(seg):
        raise ValueError("donor must match segment length")
    return donor.copy()


def apply_compress(seg, factor):
    """Keep every ``factor``-th point (plus the last) and re-interpolate."""
    seg = np.asarray(seg, dtype=np.float64)
    n = seg.size
    keep = np.arange(0, n, int(factor))
    if keep[-1] != n - 1:
        keep = np.append(keep, n - 1)
    return np.interp(np.arange(n), keep, seg[keep])


def apply_stretch(seg, factor):
    """Slow the segment down ``factor`` times, cropped to the original length."""
    seg = np.asarray(seg, dtype=np.float64)
    n = seg.size
    return np.interp(np.arange(n) / float(factor), np.arange(n), seg)


# -- injection loop ---------------------------------------------------------

def _uniform_from_ranges(rng, ranges):
    lo, hi = ranges[rng.integers(len(ranges))]
    return float(rng.uniform(lo, hi))


def _pick_donor(values, start, length, rng):
    T = values.size
    candidates = [s for s in range(0, T - length + 1) if abs(s - start) >= length]
    if not candidates:
        return values[start : start + length]
    s = candidates[rng.integers(len(candidates))]
    return values[s : s + length]


def _apply(kind, seg, original, start, spec, rng):
    if kind == "hmirror":
        return apply_hmirror(seg), {}
    if kind == "vmirror":
        return apply_vmirror(seg), {}
    if kind == "scale":
        factor = _uniform_from_ranges(rng, spec.scale_factor_ranges)
        return apply_scale(seg, factor), {"factor": factor}
    if kind == "outlier":
        magnitude = float(rng.uniform(*spec.outlier_magnitude_range))
        n_points = int(rng.integers(spec.outlier_points_range[0], spec.outlier_points_range[1] + 1))
        return apply_outlier(seg, magnitude, n_points, rng), {"magnitude": magnitude, "n_points": n_points}
    if kind == "noise":
        sigma = float(rng.uniform(*spec.noise_sigma_range))
        return apply_noise(seg, sigma, rng), {"sigma": sigma}
    if kind == "compress":
        factor = int(spec.warp_factors[rng.integers(len(spec.warp_factors))])
        return apply_compress(seg, factor), {"factor": factor}
    if kind == "stretch":
        factor = int(spec.warp_factors[rng.integers(len(spec.warp_factors))])
        return apply_stretch(seg, factor), {"factor": factor}
    if kind == "pattern":
        donor = _pick_donor(original, start, seg.size, rng)
        return apply_pattern(seg, donor), {}
    raise ValueError(kind)


def inject(values, spec: InjectionSpec, rng: Optional[np.random.Generator] = None) -> InjectionResult:
    """Corrupt non-overlapping random subsequences until the label ratio reaches ``spec.target_ratio``."""
    original = np.asarray(values, dtype=np.float64).ravel()
    T = original.size
    lo, hi = spec.subseq_len_range
    if T < hi:
        raise SeriesTooShort(f"series length {T} shorter than max subsequence length {hi}")
    rng = np.random.default_rng(spec.seed) if rng is None else rng

    out = original.copy()
    labels = np.zeros(T, dtype=np.int64)
    log = []
    target = spec.target_ratio * T
    expected_segments = math.ceil(target / ((lo + hi) / 2.0))
    budget = 100 * max(expected_segments, 1)
    attempts = 0
    while labels.sum() < target:
        if attempts >= budget:
            raise RetryBudgetExhausted(
                f"reached ratio {labels.mean():.4f} < {spec.target_ratio} after {attempts} attempts"
            )
        attempts += 1
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, T - length + 1))
        kind = spec.types[rng.integers(len(spec.types))]
        if labels[start : start + length].any():
            continue
        seg, params = _apply(kind, out[start : start + length], original, start, spec, rng)
        out[start : start + length] = seg
        labels[start : start + length] = 1
        log.append((kind, start, start + length, params))
    log.sort(key=lambda e: e[1])
    return InjectionResult(values=out, labels=labels, log=log)


def inject_series(values: np.ndarray, spec: InjectionSpec):
    """Inject each channel of a ``(T, C)`` matrix independently.

    Returns the corrupted matrix, the union of channel labels, and a per-channel log.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    rng = np.random.default_rng(spec.seed)
    out = np.empty_like(values)
    labels = np.zeros(values.shape[0], dtype=np.int64)
    logs = []
    for c in range(values.shape[1]):
        res = inject(values[:, c], spec, rng=rng)
        out[:, c] = res.values
        labels |= res.labels
        logs.extend({"channel": c, "type": k, "start": s, "end": e, "params": p} for k, s, e, p in res.log)
    return out, labels, logs
