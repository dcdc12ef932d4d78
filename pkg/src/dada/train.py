"""Reconstruction losses, the adversarial training step, pretraining and fine-tuning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import dataset as ds
from .errors import ConfigError, EmptyStream, NonFiniteLoss
from .inject import InjectionSpec, inject_series
from .mask import sample_masks
from .net import DADA, NetConfig, build, grl, load_checkpoint, model_dtype, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 5
    mask_ratio: float = 0.5
    mask_pairs_train: int = 1
    abnormal_fraction: float = 0.5
    stride: int = 10
    adversarial: bool = True
    grad_clip: Optional[float] = 1.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask_ratio must lie in (0, 1)")
        if not 0 < self.abnormal_fraction < 1:
            raise ConfigError("abnormal_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.mask_pairs_train < 1:
            raise ConfigError("mask_pairs_train must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(lr=1e-4, batch_size=2048, epochs=5, stride=1)
        base.update(overrides)
        return cls(**base)

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class LossReport:
    loss_norm: float
    loss_abnorm: float
    step: int
    epoch: int = 0


def loss_normal(x, recon):
    """Squared reconstruction error per window, averaged over the batch."""
    x, recon = torch.as_tensor(x), torch.as_tensor(recon)
    return ((x - recon) ** 2).sum(dim=-1).mean()


def loss_abnormal(x, recon, labels):
    """Squared reconstruction error restricted to labelled-anomalous points."""
    x, recon = torch.as_tensor(x), torch.as_tensor(recon)
    y = torch.as_tensor(labels).to(x.dtype)
    return (((x - recon) * y) ** 2).sum(dim=-1).mean()


def abnormal_reconstruction(model: DADA, x, masks, lam: float, reverse: bool = True, train_mode=None):
    """Anomaly-decoder reconstruction; features pass through the GRL when ``reverse``."""
    h = model.branch_features(x, masks, train_mode)
    if reverse:
        h = grl(h, lam)
    return model.combine(model.decode_abnormal(h), masks)


class Trainer:
    """Owns a model, its optimizer and every RNG stream used during training."""

    def __init__(self, model: DADA, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(cfg.seed)
        self.torch_gen_state = None
        torch.manual_seed(cfg.seed)
        self.step_count = 0
        self.epoch = 0

    @property
    def dtype(self):
        return model_dtype(self.model)

    def _tensor(self, a):
        return torch.as_tensor(np.asarray(a), dtype=self.dtype)

    def train_step(self, x_n, x_a, y_a) -> LossReport:
        """One optimizer step on ``L_n + L_a`` with the GRL between features and anomaly decoder.

        The reversed gradient makes the shared parameters descend
        ``L_n - lam * L_a`` while the anomaly decoder descends ``L_a``.
        """
        if len(x_n) == 0 or len(x_a) == 0:
            raise EmptyStream("train_step needs non-empty normal and abnormal batches")
        model, cfg = self.model, self.cfg
        model.train()
        P = model.cfg.n_patches
        reps = cfg.mask_pairs_train
        x_n = self._tensor(np.repeat(x_n, reps, axis=0))
        x_a = self._tensor(np.repeat(x_a, reps, axis=0))
        y_a = self._tensor(np.repeat(y_a, reps, axis=0))
        m_n = self._tensor(sample_masks(len(x_n), P, cfg.mask_ratio, self.rng))
        m_a = self._tensor(sample_masks(len(x_a), P, cfg.mask_ratio, self.rng))

        recon_n = model.reconstruct(x_n, m_n)
        l_n = loss_normal(x_n, recon_n)
        recon_a = abnormal_reconstruction(model, x_a, m_a, model.cfg.grl_lambda, reverse=cfg.adversarial)
        l_a = loss_abnormal(x_a, recon_a, y_a)
        # without the GRL the ablation maximizes L_a directly over every parameter
        total = l_n + l_a if cfg.adversarial else l_n - l_a
        if not torch.isfinite(total):
            raise NonFiniteLoss(
                f"step {self.step_count}: loss_norm={l_n.item()}, loss_abnorm={l_a.item()}"
            )
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        self.opt.step()
        self.step_count += 1
        return LossReport(float(l_n.item()), float(l_a.item()), self.step_count, self.epoch)

    def run_epoch(self, normal: ds.WindowBatch, abnormal: ds.WindowBatch, log_fh=None, t0=None) -> list:
        cfg = self.cfg
        n_abn = max(1, int(round(cfg.batch_size * cfg.abnormal_fraction)))
        n_norm = max(1, cfg.batch_size - n_abn)
        order_n = self.rng.permutation(len(normal))
        abn_stream = _cycle(len(abnormal), self.rng)
        reports = []
        for lo in range(0, len(order_n), n_norm):
            idx_n = order_n[lo : lo + n_norm]
            idx_a = np.array([next(abn_stream) for _ in range(n_abn)])
            rep = self.train_step(normal.windows[idx_n], abnormal.windows[idx_a], abnormal.labels[idx_a])
            reports.append(rep)
            if log_fh is not None:
                rec = {
                    "step": rep.step,
                    "epoch": self.epoch,
                    "loss_norm": rep.loss_norm,
                    "loss_abnorm": rep.loss_abnorm,
                    "lr": self.opt.param_groups[0]["lr"],
                    "wallclock": time.time() - (t0 or 0.0),
                }
                log_fh.write(json.dumps(rec) + "\n")
        self.epoch += 1
        return reports

    def state(self) -> dict:
        return {
            "optimizer": self.opt.state_dict(),
            "np_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "step": self.step_count,
            "epoch": self.epoch,
            "train_config": asdict(self.cfg),
        }

    def save(self, path, extra: Optional[dict] = None):
        payload = {"trainer": self.state()}
        if extra:
            payload.update(extra)
        save_checkpoint(path, self.model, payload)

    @classmethod
    def resume(cls, path, cfg: Optional[TrainConfig] = None) -> "Trainer":
        model, payload = load_checkpoint(path)
        st = payload.get("trainer")
        cfg = cfg or (TrainConfig(**st["train_config"]) if st else TrainConfig())
        tr = cls(model, cfg)
        if st is not None:
            tr.opt.load_state_dict(st["optimizer"])
            tr.rng.bit_generator.state = st["np_rng"]
            torch.set_rng_state(st["torch_rng"])
            tr.step_count = st["step"]
            tr.epoch = st["epoch"]
        return tr


def _cycle(n: int, rng: np.random.Generator):
    while True:
        yield from rng.permutation(n)


# -- streams ----------------------------------------------------------------

def anomalous_windows(batch: ds.WindowBatch) -> ds.WindowBatch:
    """Keep only windows that contain at least one labelled point."""
    keep = np.flatnonzero(batch.labels.any(axis=1))
    if keep.size == 0:
        raise EmptyStream("no abnormal window contains a labelled anomaly")
    return ds.take(batch, keep)


def build_streams(
    manifest: ds.DatasetManifest,
    window: int,
    stride: int,
    inject_spec: Optional[InjectionSpec] = None,
):
    """Normal and abnormal window streams from a manifest.

    When the manifest lists no abnormal series, they are produced by injecting
    anomalies into the normal ones.
    """
    normal_series = [ds.load(e.path, e.format, e.domain_tag) for e in manifest.by_role("normal")]
    abnormal_series = [ds.load(e.path, e.format, e.domain_tag) for e in manifest.by_role("abnormal")]
    if not normal_series:
        raise EmptyStream("manifest has no normal series")
    if not abnormal_series:
        spec = inject_spec or InjectionSpec(seed=manifest.seed)
        for i, ts in enumerate(normal_series):
            sub = InjectionSpec.from_dict({**spec.to_dict(), "seed": spec.seed + i})
            values, labels, _ = inject_series(ts.values, sub)
            abnormal_series.append(ds.TimeSeries(ts.name + "_inj", values, labels, ts.domain_tag))
    for ts in abnormal_series:
        if ts.labels is None:
            raise EmptyStream(f"abnormal series {ts.name} has no label column")
    normal = ds.windows_for_series(normal_series, window, stride, "train")
    abnormal = anomalous_windows(ds.windows_for_series(abnormal_series, window, stride, "train"))
    return normal, abnormal


def epoch_means(reports: Sequence[LossReport]) -> list:
    by_epoch: dict = {}
    for r in reports:
        by_epoch.setdefault(r.epoch, []).append((r.loss_norm, r.loss_abnorm))
    return [
        {"epoch": e, "loss_norm": float(np.mean([a for a, _ in v])), "loss_abnorm": float(np.mean([b for _, b in v]))}
        for e, v in sorted(by_epoch.items())
    ]


def fit(trainer: Trainer, normal, abnormal, epochs: int, log_path=None) -> list:
    reports = []
    t0 = time.time()
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for _ in range(epochs):
            ep = trainer.run_epoch(normal, abnormal, fh, t0)
            reports.extend(ep)
            m = epoch_means(ep)[0]
            log.info("epoch %d: loss_norm=%.4f loss_abnorm=%.4f", m["epoch"], m["loss_norm"], m["loss_abnorm"])
    finally:
        if fh:
            fh.close()
    return reports


def pretrain(
    manifest: ds.DatasetManifest,
    net_config: NetConfig,
    train_config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
    inject_spec: Optional[InjectionSpec] = None,
):
    """Train from scratch on the manifest's normal/abnormal streams.

    Returns ``(trainer, reports)``; writes a checkpoint when a path is given.
    """
    normal, abnormal = build_streams(manifest, net_config.window, train_config.stride, inject_spec)
    model = build(net_config, seed=train_config.seed, dtype=train_config.torch_dtype)
    trainer = Trainer(model, train_config)
    reports = fit(trainer, normal, abnormal, train_config.epochs, log_path)
    if checkpoint_path is not None:
        trainer.save(checkpoint_path, {"history": epoch_means(reports)})
    return trainer, reports


def finetune(
    checkpoint,
    target_manifest: ds.DatasetManifest,
    train_config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
    inject_spec: Optional[InjectionSpec] = None,
):
    """Continue training a checkpoint on target-domain data (fresh optimizer)."""
    model, _ = load_checkpoint(checkpoint)
    trainer = Trainer(model, train_config)
    reports = []
    if train_config.epochs > 0:
        normal, abnormal = build_streams(target_manifest, model.cfg.window, train_config.stride, inject_spec)
        reports = fit(trainer, normal, abnormal, train_config.epochs, log_path)
    if checkpoint_path is not None:
        trainer.save(checkpoint_path, {"history": epoch_means(reports)})
    return trainer, reports
