"""Network: patch embedding, dilated-conv encoder, adaptive bottlenecks, dual decoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, IndivisibleWindow

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    window: int = 100
    patch_size: int = 5
    d_model: int = 64
    encoder_layers: int = 10
    kernel_size: int = 3
    d_r: int = 128
    pool_sizes: tuple = (8, 16, 32, 64, 96, 112)
    k: int = 3
    grl_lambda: float = 1.0
    use_adabn: bool = True
    dual_decoders: bool = True
    # width of the single bottleneck used when use_adabn is off
    fixed_bottleneck: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "pool_sizes", tuple(int(s) for s in self.pool_sizes))
        if self.window % self.patch_size:
            raise IndivisibleWindow(f"window {self.window} not divisible by patch size {self.patch_size}")
        if self.encoder_layers < 1:
            raise ConfigError("encoder_layers must be >= 1")
        if not self.pool_sizes:
            raise ConfigError("pool_sizes must be non-empty")
        if not 1 <= self.k <= len(self.pool_sizes):
            raise ConfigError(f"k={self.k} must be in [1, {len(self.pool_sizes)}]")
        if any(s >= self.d_r for s in self.pool_sizes):
            raise ConfigError(f"every bottleneck width must be < d_r={self.d_r}")
        if self.grl_lambda < 0:
            raise ConfigError("grl_lambda must be >= 0")

    @property
    def n_patches(self) -> int:
        return self.window // self.patch_size

    @property
    def single_bottleneck(self) -> int:
        return self.fixed_bottleneck or max(self.pool_sizes)

    @classmethod
    def full_scale(cls, **overrides) -> "NetConfig":
        base = dict(d_model=64, d_r=320, pool_sizes=(16, 32, 64, 128, 192, 256), k=3)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pool_sizes"] = list(self.pool_sizes)
        return d


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.lam * grad, None


def grl(h: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward; gradient multiplied by ``-lam`` on the way back."""
    return _GradReverse.apply(h, float(lam))


def shift(h: torch.Tensor, offset: int) -> torch.Tensor:
    """``out[:, p] = h[:, p - offset]`` along the patch axis, zero-filled."""
    P = h.shape[1]
    if offset == 0:
        return h
    if abs(offset) >= P:
        return torch.zeros_like(h)
    pad = torch.zeros_like(h[:, : abs(offset)])
    if offset > 0:
        return torch.cat([pad, h[:, :-offset]], dim=1)
    return torch.cat([h[:, -offset:], pad], dim=1)


class ConvLayer(nn.Module):
    """Residual dilated convolution over the patch axis, channels-last.

    The taps are gathered by shifting and mixed with one linear map, which is
    equivalent to a zero-padded ``Conv1d`` but much cheaper to differentiate on CPU.
    """

    def __init__(self, channels, kernel_size, dilation):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        half = kernel_size // 2
        self.offsets = [dilation * (half - j) for j in range(kernel_size)]
        self.mix = nn.Linear(kernel_size * channels, channels)

    def forward(self, h):  # h: (N, P, C)
        a = F.gelu(h)
        return h + self.mix(torch.cat([shift(a, o) for o in self.offsets], dim=-1))


class DilatedEncoder(nn.Module):
    """Residual stack of dilated 1-D convolutions over the patch axis."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        P = cfg.n_patches
        self.dilations = [min(2**i, max(P, 1)) for i in range(cfg.encoder_layers)]
        # registered as L0..L{n-1} so checkpoint keys read encoder.L{i}.*
        for i, d in enumerate(self.dilations):
            self.add_module(f"L{i}", ConvLayer(cfg.d_model, cfg.kernel_size, d))
        self.proj = nn.Linear(cfg.d_model, cfg.d_r)
        self.kernel_size = cfg.kernel_size

    def receptive_field(self) -> int:
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)

    def forward(self, e):  # e: (N, P, d_model)
        h = e
        for i in range(len(self.dilations)):
            h = getattr(self, f"L{i}")(h)
        return self.proj(F.gelu(h))


class Bottleneck(nn.Module):
    def __init__(self, d_r, width, activation=True):
        super().__init__()
        self.down = nn.Linear(d_r, width)
        self.up = nn.Linear(width, d_r)
        self.activation = activation

    def compress(self, z):
        h = self.down(z)
        return F.gelu(h) if self.activation else h

    def forward(self, z):
        return self.up(self.compress(z))


class Router(nn.Module):
    def __init__(self, d_r, n_experts):
        super().__init__()
        self.w = nn.Parameter(torch.randn(d_r, n_experts) * 0.02)
        self.w_noise = nn.Parameter(torch.zeros(d_r, n_experts))

    def forward(self, z, noisy: bool, eps: Optional[torch.Tensor] = None):
        logits = z @ self.w
        if noisy:
            if eps is None:
                eps = torch.randn_like(logits)
            logits = logits + eps * F.softplus(z @ self.w_noise)
        return logits


def topk_weights(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Softmax restricted to the ``k`` largest logits; zeros elsewhere."""
    top, idx = logits.topk(k, dim=-1)
    return torch.zeros_like(logits).scatter(-1, idx, torch.softmax(top, dim=-1))


class PatchDecoder(nn.Module):
    """Per-patch affine head. The input is layer-normalized without learned
    scale, so feature magnitude cannot be used to win the adversarial game."""

    def __init__(self, d_r, patch_size, normalize_input=True):
        super().__init__()
        self.head = nn.Linear(d_r, patch_size)
        self.normalize_input = normalize_input

    def forward(self, h):  # (N, P, d_r) -> (N, W)
        if self.normalize_input:
            h = F.layer_norm(h, h.shape[-1:])
        return self.head(h).flatten(1)


class DADA(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.patch_size, cfg.d_model)
        self.encoder = DilatedEncoder(cfg)
        if cfg.use_adabn:
            self.pool = nn.ModuleList([Bottleneck(cfg.d_r, s) for s in cfg.pool_sizes])
            self.router = Router(cfg.d_r, len(cfg.pool_sizes))
        else:
            self.pool = nn.ModuleList([Bottleneck(cfg.d_r, cfg.single_bottleneck)])
            self.router = None
        self.dec_n = PatchDecoder(cfg.d_r, cfg.patch_size)
        self.dec_a = PatchDecoder(cfg.d_r, cfg.patch_size) if cfg.dual_decoders else None

    # parameter groups of the adversarial game
    def feature_parameters(self):
        mods = [self.embed, self.encoder, self.pool] + ([self.router] if self.router is not None else [])
        return [p for m in mods for p in m.parameters()]

    def normal_decoder_parameters(self):
        return list(self.dec_n.parameters())

    def anomaly_decoder_parameters(self):
        return list(self.dec_a.parameters()) if self.dec_a is not None else []

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(x.shape[0], self.cfg.n_patches, self.cfg.patch_size)

    def embed_patches(self, patches):
        return self.embed(patches)

    def encode(self, e):
        return self.encoder(e)

    def route(self, z, train_mode: Optional[bool] = None, eps=None):
        """Router logits for window representations ``z`` of shape ``(N, d_r)``."""
        noisy = self.training if train_mode is None else train_mode
        return self.router(z, noisy, eps)

    def bottleneck_apply(self, i: int, z):
        if not 0 <= i < len(self.pool):
            raise IndexError(f"bottleneck {i} out of range")
        return self.pool[i](z)

    def routing_weights(self, z, train_mode: Optional[bool] = None):
        """Per-window fusion weights over the pool, shape ``(N, B)``."""
        if self.router is None:
            return torch.ones(z.shape[0], 1, dtype=z.dtype, device=z.device)
        pooled = z.mean(dim=1)
        return topk_weights(self.route(pooled, train_mode), self.cfg.k)

    def adabn(self, z, train_mode: Optional[bool] = None):
        weights = self.routing_weights(z, train_mode)
        out = torch.zeros_like(z)
        # each bottleneck only runs on the windows that selected it
        for i in range(len(self.pool)):
            rows = torch.nonzero(weights[:, i]).flatten()
            if rows.numel():
                contrib = weights[rows, i, None, None] * self.pool[i](z[rows])
                out = out.index_add(0, rows, contrib)
        return out

    def features(self, patches, train_mode: Optional[bool] = None):
        """G(.): embed, encode and pass through the adaptive bottlenecks."""
        return self.adabn(self.encode(self.embed_patches(patches)), train_mode)

    def decode_normal(self, h):
        return self.dec_n(h)

    def decode_abnormal(self, h):
        return (self.dec_a or self.dec_n)(h)

    def branch_features(self, x: torch.Tensor, masks: torch.Tensor, train_mode: Optional[bool] = None):
        """Features of both complementary branches, stacked ``[X_m; X_bar_m]``."""
        patches = self.patchify(x)
        m = masks.to(patches.dtype)[..., None]
        both = torch.cat([patches * m, patches * (1 - m)], dim=0)
        return self.features(both, train_mode)

    def combine(self, recon: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        n = masks.shape[0]
        mp = masks.to(recon.dtype).repeat_interleave(self.cfg.patch_size, dim=-1)
        return (1 - mp) * recon[:n] + mp * recon[n:]

    def reconstruct(self, x, masks, train_mode: Optional[bool] = None):
        """Normal-decoder reconstruction of ``x`` (N, W) under patch masks (N, P)."""
        h = self.branch_features(x, masks, train_mode)
        return self.combine(self.decode_normal(h), masks)

    def forward(self, x, masks):
        return self.reconstruct(x, masks)


def build(cfg: NetConfig, seed: int = 0, dtype=torch.float32) -> DADA:
    torch.manual_seed(seed)
    return DADA(cfg).to(dtype)


def save_checkpoint(path, model: DADA, extra: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    payload = {"format_version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(), "state": state}
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path):
    """Return ``(model, payload)``; the model is in eval mode."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    cfg = NetConfig(**payload["config"])
    dtype = next(iter(payload["state"].values())).dtype
    model = DADA(cfg).to(dtype)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload


def model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype
