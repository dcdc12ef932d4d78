"""Command-line entry point: ``dada <command> [options]``.

Every command accepts ``--config run.json``, repeated ``--set key.sub=value``
overrides and ``--run-dir``. Failures exit nonzero and print a JSON error
record on stderr (also saved as ``error.json`` in the run directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataset as ds
from . import pipeline, synth, train
from .errors import ConfigError, DadaError
from .inject import InjectionSpec, inject_series
from .train import TrainConfig

log = logging.getLogger("dada")

COMMANDS = ("synth", "inject", "pretrain", "finetune", "score", "evaluate", "report", "zero-shot", "ablation")


def _train_flags(p: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field, e.g. ``--batch-size``; each becomes a ``train.*`` override."""
    g = p.add_argument_group("training")
    for f in fields(TrainConfig):
        # --seed is the top-level run seed; the trainer's own seed gets a prefixed flag
        flag = "--train-seed" if f.name == "seed" else "--" + f.name.replace("_", "-")
        default = f.default if f.default is not MISSING else None
        if isinstance(default, bool):
            g.add_argument(flag, dest=f"train__{f.name}", action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = float if isinstance(default, float) else int if isinstance(default, int) else str
            g.add_argument(flag, dest=f"train__{f.name}", type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted config key (repeatable)")
    common.add_argument("--run-dir", help="output directory (overrides run_dir)")
    common.add_argument("--seed", type=int, help="overrides the top-level seed")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="dada", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic multi-domain corpus")
    p.add_argument("--out", help="corpus directory (default: <run_dir>/corpus)")

    p = sub.add_parser("inject", parents=[common], help="inject anomalies into a CSV series")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="train from scratch on a manifest")
    p.add_argument("--manifest", help="dataset manifest (overrides dataset)")
    _train_flags(p)

    p = sub.add_parser("finetune", parents=[common], help="continue training a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="target-domain manifest (overrides dataset)")
    _train_flags(p)

    p = sub.add_parser("score", parents=[common], help="anomaly scores and SPOT decisions for a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--calibration", help="clean CSV used to fit the SPOT threshold")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--out", required=True, help="scores CSV (t,score,decision)")

    p = sub.add_parser("evaluate", parents=[common], help="EvalReport for a scores CSV against labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True, help="CSV with a label column")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="aggregate reports into tables and plots")
    p.add_argument("--out", help="report directory (default: <run_dir>/report)")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("zero-shot", parents=[common], help="pretrain, then score and evaluate test series")
    p.add_argument("--manifest")
    _train_flags(p)

    p = sub.add_parser("ablation", parents=[common], help="zero-shot runs with components removed")
    p.add_argument("--manifest")
    p.add_argument("--toggles", default="", help="comma list from adabn,adversarial,dual_decoders")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    _train_flags(p)
    return parser


def _overrides(args) -> list:
    ov = list(args.overrides)
    if args.run_dir:
        ov.append(f"run_dir={json.dumps(args.run_dir)}")
    if args.seed is not None:
        ov.append(f"seed={args.seed}")
    if getattr(args, "manifest", None):
        ov.append(f"dataset={json.dumps(str(Path(args.manifest).resolve()))}")
    for key, value in vars(args).items():
        if key.startswith("train__") and value is not None:
            ov.append(f"train.{key[len('train__'):]}={json.dumps(value)}")
    if getattr(args, "n_pairs", None) is not None:
        ov.append(f"detect.n_pairs={args.n_pairs}")
    if getattr(args, "q", None) is not None:
        ov.append(f"detect.q={args.q}")
    return ov


def _csv_list(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


def run(args) -> int:
    cfg = config_mod.load(args.config, _overrides(args))
    run_dir = Path(cfg.run_dir)
    cmd = args.command

    if cmd == "synth":
        out = Path(args.out) if args.out else run_dir / "corpus"
        spec = InjectionSpec.from_dict({**cfg.inject.to_dict(), "target_ratio": cfg.synth.anomaly_ratio})
        manifest = synth.build_corpus(out, cfg.synth, spec)
        pipeline.write_meta(out, cfg, cmd, {"manifest": str(manifest)})
        print(manifest)

    elif cmd == "inject":
        ts = ds.load(args.input)
        spec = InjectionSpec.from_dict({**cfg.inject.to_dict(), "seed": cfg.seed})
        values, labels, events = inject_series(ts.values, spec)
        if ts.labels is not None:
            labels = labels | ts.labels
        out = Path(args.out)
        ds.save_csv(out, values, labels)
        pipeline.write_json(out.with_suffix(".injection.json"),
                            {"input": args.input, "spec": spec.to_dict(), "events": events,
                             "ratio": float(np.mean(labels))})
        pipeline.write_meta(run_dir, cfg, cmd, {"output": str(out)})

    elif cmd == "pretrain":
        res = pipeline.pretrain_run(cfg, run_dir)
        print(res["checkpoint"])

    elif cmd == "finetune":
        manifest = ds.load_manifest(cfg.manifest_path())
        run_dir.mkdir(parents=True, exist_ok=True)
        out = run_dir / "finetuned.pt"
        log_path = run_dir / "finetune_log.ndjson"
        log_path.unlink(missing_ok=True)
        _, reports = train.finetune(args.checkpoint, manifest, cfg.train, out, log_path, cfg.inject)
        pipeline.write_json(run_dir / "finetune_history.json", train.epoch_means(reports))
        pipeline.write_meta(run_dir, cfg, cmd, {"checkpoint": args.checkpoint})
        print(out)

    elif cmd == "score":
        model = pipeline.load_model(args.checkpoint)
        ss, _ = pipeline.score_series_file(model, args.input, cfg, args.calibration)
        side = {"input": args.input, "checkpoint": args.checkpoint, "n_pairs": cfg.detect.n_pairs,
                "seed": cfg.seed, "q": cfg.detect.q, "calibration": args.calibration}
        pipeline.write_scores(args.out, ss, side)
        pipeline.write_meta(run_dir, cfg, cmd, {"output": args.out})

    elif cmd == "evaluate":
        rep = pipeline.evaluate_files(args.scores, args.labels, cfg.eval.alphas)
        pipeline.write_json(args.out, rep.to_dict())
        print(json.dumps(rep.to_dict(), sort_keys=True))

    elif cmd == "report":
        res = pipeline.report(run_dir, args.out, plots=not args.no_plots)
        print(Path(res["table_md"]).read_text(), end="")

    elif cmd == "zero-shot":
        summary = pipeline.zero_shot(cfg, run_dir)
        pipeline.report(run_dir)
        print(json.dumps({k: v for k, v in summary.items() if k != "history"}, sort_keys=True))

    elif cmd == "ablation":
        try:
            seeds = [int(s) for s in _csv_list(args.seeds)]
        except ValueError:
            raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
        results = pipeline.ablation(cfg, _csv_list(args.toggles), run_dir, seeds)
        pipeline.report(run_dir)
        print(json.dumps({v: [round(s["affiliation_f1"], 4) for s in runs] for v, runs in results.items()}))
    return 0


def _error_record(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (DadaError, ValueError) as exc:
        code = exc.exit_code if isinstance(exc, DadaError) else ConfigError.exit_code
        record = _error_record(exc, code)
        print(json.dumps(record), file=sys.stderr)
        if args.run_dir:
            try:
                pipeline.write_json(Path(args.run_dir) / "error.json", record)
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
