"""Run orchestration: file-level scoring/evaluation, zero-shot runs, ablations and reports.

Every command writes into a run directory together with a ``meta.json``
that records the config hash, seed and library versions.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import dataset as ds
from . import detect, metrics, train
from .config import RunConfig
from .errors import ConfigError, MalformedFile
from .net import load_checkpoint

VARIANTS = ("full", "no-adabn", "no-adversarial", "no-dual")
TOGGLE_TO_VARIANT = {"adabn": "no-adabn", "adversarial": "no-adversarial", "dual_decoders": "no-dual"}


def versions() -> dict:
    import matplotlib
    import scipy

    from . import __version__

    return {
        "dada": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "matplotlib": matplotlib.__version__,
    }


def write_meta(out_dir, cfg: RunConfig, command: str, extra: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": versions(),
        "config": cfg.to_dict(),
        "wallclock": time.time(),
    }
    if extra:
        meta.update(extra)
    path = out / "meta.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# -- scoring and evaluation on files ----------------------------------------

def calibration_path(input_path, mode: str = "auto") -> Optional[Path]:
    """Clean calibration split next to ``input_path`` (``x_test.csv`` -> ``x_train.csv``), if any."""
    p = Path(input_path)
    if mode != "auto" or not p.stem.endswith("_test"):
        return None
    cand = p.with_name(p.stem[: -len("_test")] + "_train" + p.suffix)
    return cand if cand.is_file() else None


def score_series_file(model, input_path, cfg: RunConfig, calibration=None):
    """Score one CSV and threshold it with SPOT; returns ``(ScoreSeries, TimeSeries)``."""
    d = cfg.detect
    ts = ds.load(input_path)
    ss = detect.score_series(ts, model, d.n_pairs, cfg.seed, d.mask_ratio)
    cal = calibration if calibration is not None else calibration_path(input_path, d.calibration)
    cal_scores = None
    if cal is not None:
        cal_scores = detect.score_series(ds.load(cal), model, d.n_pairs, cfg.seed + 1, d.mask_ratio).scores
    return detect.calibrate_and_detect(ss, d.spot, cal_scores), ts


def write_scores(path, ss: detect.ScoreSeries, sidecar: dict) -> Path:
    """``t,score,decision`` CSV plus a ``.json`` sidecar with the threshold and SPOT fit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "score", "decision"])
        for t, (s, dcs) in enumerate(zip(ss.scores, ss.decisions)):
            w.writerow([t, repr(float(s)), int(dcs)])
    spot = ss.spot
    meta = dict(sidecar)
    meta["threshold"] = ss.threshold
    if spot is not None:
        meta["spot"] = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                        for k, v in spot.__dict__.items()}
    write_json(path.with_suffix(".json"), meta)
    return path


def read_scores(path):
    """Return ``(scores, decisions, sidecar)`` from a scores CSV."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        scores = np.array([float(r["score"]) for r in rows])
        decisions = np.array([int(r["decision"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise MalformedFile(f"{path}: not a scores file ({exc})") from None
    side = path.with_suffix(".json")
    sidecar = json.loads(side.read_text()) if side.is_file() else {}
    return scores, decisions, sidecar


def evaluate_files(scores_path, labels_path, alphas: Sequence[float] = ()) -> metrics.EvalReport:
    scores, decisions, _ = read_scores(scores_path)
    ts = ds.load(labels_path)
    if ts.labels is None:
        raise MalformedFile(f"{labels_path}: no label column")
    if ts.T != scores.size:
        raise MalformedFile(f"{labels_path}: length {ts.T} != scores length {scores.size}")
    return metrics.evaluate(scores, decisions, ts.labels, alphas)


# -- end-to-end runs ----------------------------------------------------------

def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "no-adabn":
        return replace(cfg, net=replace(cfg.net, use_adabn=False))
    if variant == "no-adversarial":
        return replace(cfg, train=replace(cfg.train, adversarial=False))
    if variant == "no-dual":
        return replace(cfg, net=replace(cfg.net, dual_decoders=False))
    return cfg


def pretrain_run(cfg: RunConfig, out_dir) -> dict:
    """Pretrain on ``cfg.dataset``; writes checkpoint, NDJSON log, loss history and meta."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(cfg.manifest_path())
    log_path = out / "train_log.ndjson"
    log_path.unlink(missing_ok=True)
    t0 = time.time()
    trainer, reports = train.pretrain(manifest, cfg.net, cfg.train, out / "checkpoint.pt", log_path, cfg.inject)
    history = train.epoch_means(reports)
    write_json(out / "history.json", history)
    write_meta(out, cfg, "pretrain", {"train_seconds": time.time() - t0})
    return {"trainer": trainer, "history": history, "checkpoint": out / "checkpoint.pt"}


def zero_shot_eval(model, cfg: RunConfig, out_dir=None) -> list:
    """Score and evaluate every ``test`` entry of the manifest.

    Returns one ``{"name", "report", "scores_path"}`` dict per series.
    """
    manifest = ds.load_manifest(cfg.manifest_path())
    tests = manifest.by_role("test")
    if not tests:
        raise ConfigError("manifest has no test entries")
    results = []
    for entry in tests:
        ss, ts = score_series_file(model, entry.path, cfg)
        if ts.labels is None:
            raise MalformedFile(f"{entry.path}: test series needs labels")
        rep = metrics.evaluate(ss.scores, ss.decisions, ts.labels, cfg.eval.alphas)
        name = Path(entry.path).stem
        scores_path = None
        if out_dir is not None:
            scores_path = write_scores(Path(out_dir) / "scores" / f"{name}.csv", ss,
                                       {"input": entry.path, "labels": entry.path})
            write_json(Path(out_dir) / "reports" / f"{name}.json", rep.to_dict())
        results.append({"name": name, "report": rep, "scores_path": scores_path})
    return results


def summarize(results: list) -> dict:
    reps = [r["report"] for r in results]
    aucs = [r.auc_roc for r in reps if r.auc_roc is not None]
    return {
        "affiliation_p": float(np.mean([r.affiliation_p for r in reps])),
        "affiliation_r": float(np.mean([r.affiliation_r for r in reps])),
        "affiliation_f1": float(np.mean([r.affiliation_f1 for r in reps])),
        "auc_roc": float(np.mean(aucs)) if aucs else None,
        "n_series": len(reps),
    }


def zero_shot(cfg: RunConfig, out_dir) -> dict:
    """Pretrain on the training domains, then score the held-out test series."""
    out = Path(out_dir)
    t0 = time.time()
    run = pretrain_run(cfg, out)
    results = zero_shot_eval(run["trainer"].model, cfg, out)
    summary = summarize(results)
    summary["history"] = run["history"]
    summary["seconds"] = time.time() - t0
    write_json(out / "summary.json", {k: v for k, v in summary.items() if k != "seconds"})
    write_meta(out, cfg, "zero-shot", {"seconds": summary["seconds"]})
    return summary


def ablation(cfg: RunConfig, toggles: Sequence[str], out_dir, seeds: Sequence[int] = (0,)) -> dict:
    """Zero-shot runs for the full model and each requested component removal.

    Returns ``{variant: [summary per seed]}``.
    """
    bad = set(toggles) - set(TOGGLE_TO_VARIANT)
    if bad:
        raise ConfigError(f"unknown ablation toggles {sorted(bad)}; expected {sorted(TOGGLE_TO_VARIANT)}")
    variants = ["full"] + [TOGGLE_TO_VARIANT[t] for t in sorted(set(toggles))]
    out = Path(out_dir)
    results = {}
    for variant in variants:
        for seed in seeds:
            vcfg = variant_config(cfg, variant)
            vcfg = replace(vcfg, seed=seed, train=replace(vcfg.train, seed=seed))
            summary = zero_shot(vcfg, out / variant / f"seed{seed}")
            results.setdefault(variant, []).append(summary)
    table = {
        v: {
            "affiliation_f1": float(np.mean([s["affiliation_f1"] for s in runs])),
            "auc_roc": float(np.mean([s["auc_roc"] for s in runs if s["auc_roc"] is not None] or [np.nan])),
            "seeds": list(seeds),
        }
        for v, runs in results.items()
    }
    write_json(out / "ablation.json", table)
    write_meta(out, cfg, "ablation", {"toggles": sorted(set(toggles)), "seeds": list(seeds)})
    return results


# -- reporting -----------------------------------------------------------------

REPORT_COLUMNS = ("name", "affiliation_p", "affiliation_r", "affiliation_f1", "auc_roc")


def collect_reports(paths) -> list:
    rows = []
    for p in paths:
        p = Path(p)
        raw = json.loads(p.read_text())
        if not {"affiliation_p", "affiliation_r", "affiliation_f1"} <= set(raw):
            continue
        rows.append({"name": str(p.with_suffix("")), **{k: raw.get(k) for k in REPORT_COLUMNS[1:]}})
    return rows


def _fmt(v):
    return "" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))


def write_table(rows: list, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, md_path = out / "table.csv", out / "table.md"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
    lines += ["| " + " | ".join(_fmt(r[c]) for c in REPORT_COLUMNS) + " |" for r in rows]
    md_path.write_text("\n".join(lines) + "\n")
    return csv_path, md_path


def report(run_dir, out_dir=None, plots: bool = True) -> dict:
    """Aggregate every EvalReport JSON under ``run_dir`` into a table and draw score plots."""
    from .plotting import plot_losses, plot_scores

    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run / "report"
    report_paths = sorted(p for p in run.rglob("reports/*.json") if out not in p.parents)
    rows = collect_reports(report_paths)
    for r in rows:
        r["name"] = str(Path(r["name"]).relative_to(run))
    csv_path, md_path = write_table(rows, out)
    figures = []
    if plots:
        for scores_csv in sorted(run.rglob("scores/*.csv")):
            scores, _, side = read_scores(scores_csv)
            labels = values = None
            src = side.get("labels") or side.get("input")
            if src and Path(src).is_file():
                ts = ds.load(src)
                labels = ts.labels
                values = ts.values[:, 0] if ts.T == scores.size else None
                if labels is not None and labels.size != scores.size:
                    labels = None
            name = str(scores_csv.relative_to(run).with_suffix("")).replace("/", "__")
            figures.append(plot_scores(out / "plots" / f"{name}.png", scores, side.get("threshold"),
                                       labels, values, title=scores_csv.stem))
        for hist in sorted(run.rglob("history.json")):
            history = json.loads(hist.read_text())
            if history:
                rel = hist.parent.relative_to(run)
                name = "run" if rel == Path(".") else str(rel).replace("/", "__")
                figures.append(plot_losses(out / "plots" / f"losses_{name}.png", history, title=name))
    return {"rows": rows, "table_csv": csv_path, "table_md": md_path, "figures": figures}


def load_model(checkpoint):
    try:
        return load_checkpoint(checkpoint)[0]
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {checkpoint} does not exist") from None
