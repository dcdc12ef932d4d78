"""Synthetic multi-domain corpus standing in for real pretraining data.

Four series families: sines, sawtooth with trend, AR noise and
amplitude-modulated carriers. One family is held out and only appears as
labelled test series (plus a clean calibration split).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import json

import numpy as np

from . import dataset as ds
from .inject import ANOMALY_TYPES, InjectionSpec, inject_series

FAMILIES = ("sine", "sawtooth_trend", "ar_noise", "am")


@dataclass(frozen=True)
class SynthConfig:
    families: tuple = FAMILIES
    held_out: str = "am"
    series_per_family: int = 3
    length: int = 20_000
    calibration_length: int = 10_000
    anomaly_ratio: float = 0.05
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        return d


def _slow_curve(rng, n, lo, hi, n_terms=4, min_period=2000.0):
    """Smooth random curve in ``[lo, hi]`` (log-uniform), drifting over thousands of steps."""
    t = np.arange(n)
    c = np.zeros(n)
    for _ in range(n_terms):
        c += rng.normal() * np.sin(2 * np.pi * t / rng.uniform(min_period, 4 * min_period) + rng.uniform(0, 2 * np.pi))
    c = (c - c.min()) / max(c.max() - c.min(), 1e-12)
    return np.exp(np.log(lo) + c * (np.log(hi) - np.log(lo)))


def _phase(period):
    return 2 * np.pi * np.cumsum(1.0 / period)


def _sine(rng, n):
    # two-tone sinusoid whose base period drifts within a series
    ph = _phase(_slow_curve(rng, n, 12, 80)) + rng.uniform(0, 2 * np.pi)
    amp = _slow_curve(rng, n, 0.5, 3.0)
    w2 = rng.uniform(0.2, 0.6)
    x = amp * (np.sin(ph) + w2 * np.sin(2 * ph + rng.uniform(0, 2 * np.pi)))
    return x + rng.normal(0, 0.02, n) * amp + rng.uniform(-5, 5)


def _sawtooth_trend(rng, n):
    ph = _phase(_slow_curve(rng, n, 20, 100)) / (2 * np.pi) + rng.uniform()
    amp = _slow_curve(rng, n, 0.5, 2.0)
    saw = 2.0 * (ph % 1.0) - 1.0
    trend = np.cumsum(rng.normal(0, 1, n)) * 0.002 + rng.uniform(-2, 2) * np.arange(n) / n
    return amp * saw + trend + rng.normal(0, 0.02, n) * amp


def _ar_noise(rng, n):
    # AR(2) with complex roots: a noisy quasi-periodic process
    r = rng.uniform(0.97, 0.99)
    period = _slow_curve(rng, n + 200, 20, 80)
    e = rng.normal(0, 1.0, n + 200)
    x = np.zeros(n + 200)
    for t in range(2, n + 200):
        a1 = 2 * r * np.cos(2 * np.pi / period[t])
        x[t] = a1 * x[t - 1] - r * r * x[t - 2] + e[t]
    x = x[200:]
    return x / x.std() * rng.uniform(0.5, 2.0)


def _am(rng, n):
    # asymmetric carrier (second harmonic off quadrature) with drifting period
    # under a slow amplitude envelope
    ph = _phase(_slow_curve(rng, n, 12, 60)) + rng.uniform(0, 2 * np.pi)
    slow = rng.uniform(300, 1000)
    amp = rng.uniform(0.5, 3.0)
    env = 1.0 + 0.5 * np.sin(2 * np.pi * np.arange(n) / slow + rng.uniform(0, 2 * np.pi))
    carrier = np.sin(ph) + rng.uniform(0.3, 0.5) * np.sin(2 * ph + rng.uniform(-0.6, 0.6))
    x = amp * env * carrier
    return x + rng.normal(0, 0.02, n) * amp


GENERATORS = {"sine": _sine, "sawtooth_trend": _sawtooth_trend, "ar_noise": _ar_noise, "am": _am}


def generate(family: str, n: int, rng: np.random.Generator) -> np.ndarray:
    return GENERATORS[family](rng, n)


def _write_log(path, events):
    path.write_text(json.dumps(events, sort_keys=True) + "\n")


def build_corpus(out_dir, cfg: SynthConfig = SynthConfig(), inject_spec: InjectionSpec | None = None):
    """Write the corpus CSVs and ``manifest.json`` under ``out_dir``; return the manifest path.

    Training families contribute a clean (normal) and an injected (abnormal)
    copy of each series. The held-out family contributes an injected test
    series and a clean ``*_train.csv`` calibration split that is not listed
    in the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_spec = inject_spec or InjectionSpec(types=ANOMALY_TYPES, target_ratio=cfg.anomaly_ratio)
    entries = []
    for fi, family in enumerate(cfg.families):
        for i in range(cfg.series_per_family):
            seed = cfg.seed * 1000 + fi * 100 + i
            rng = np.random.default_rng(seed)
            name = f"{family}_{i}"
            spec = InjectionSpec.from_dict({**base_spec.to_dict(), "seed": seed})
            if family == cfg.held_out:
                full = generate(family, cfg.calibration_length + cfg.length, rng)
                calib, test = full[: cfg.calibration_length], full[cfg.calibration_length :]
                ds.save_csv(out / f"{name}_train.csv", calib)
                values, labels, events = inject_series(test, spec)
                ds.save_csv(out / f"{name}_test.csv", values, labels)
                _write_log(out / f"{name}_test.injection.json", events)
                entries.append(ds.ManifestEntry(str(out / f"{name}_test.csv"), "test", family))
            else:
                clean = generate(family, cfg.length, rng)
                ds.save_csv(out / f"{name}.csv", clean)
                values, labels, events = inject_series(clean, spec)
                ds.save_csv(out / f"{name}_abn.csv", values, labels)
                _write_log(out / f"{name}_abn.injection.json", events)
                entries.append(ds.ManifestEntry(str(out / f"{name}.csv"), "normal", family))
                entries.append(ds.ManifestEntry(str(out / f"{name}_abn.csv"), "abnormal", family))
    manifest_path = out / "manifest.json"
    ds.write_manifest(manifest_path, ds.DatasetManifest(entries, cfg.seed))
    return manifest_path
