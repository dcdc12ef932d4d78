"""Patching and complementary patch masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleWindow


@dataclass(frozen=True)
class PatchSequence:
    patches: np.ndarray  # (..., P, d)
    window_origin: object = None

    @property
    def P(self) -> int:
        return self.patches.shape[-2]

    @property
    def d(self) -> int:
        return self.patches.shape[-1]


@dataclass(frozen=True)
class MaskPair:
    mask: np.ndarray  # (P,) in {0, 1}
    ratio: float
    seed: int

    @property
    def complement(self) -> np.ndarray:
        return 1 - self.mask


def n_masked(P: int, ratio: float) -> int:
    # round half up
    return int(math.floor(ratio * P + 0.5))


def patchify(window: np.ndarray, d: int, origin=None) -> PatchSequence:
    window = np.asarray(window)
    W = window.shape[-1]
    if d < 1 or W % d:
        raise IndivisibleWindow(f"window length {W} is not divisible by patch size {d}")
    return PatchSequence(window.reshape(*window.shape[:-1], W // d, d), origin)


def unpatchify(x: PatchSequence) -> np.ndarray:
    p = x.patches
    return p.reshape(*p.shape[:-2], p.shape[-2] * p.shape[-1])


def make_complementary_masks(P: int, ratio: float, seed: int) -> MaskPair:
    if P < 2:
        raise ValueError("need at least two patches")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    mask = np.zeros(P, dtype=np.int64)
    mask[rng.permutation(P)[: n_masked(P, ratio)]] = 1
    return MaskPair(mask=mask, ratio=ratio, seed=seed)


def sample_masks(n: int, P: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent masks as an ``(n, P)`` 0/1 matrix, each with the exact popcount."""
    k = n_masked(P, ratio)
    order = np.argsort(rng.random((n, P)), axis=1)
    masks = np.zeros((n, P), dtype=np.int64)
    np.put_along_axis(masks, order[:, :k], 1, axis=1)
    return masks


def apply_mask(x: PatchSequence, m: np.ndarray) -> PatchSequence:
    m = np.asarray(m)
    return PatchSequence(x.patches * m[..., :, None], x.window_origin)


def broadcast_mask(m: np.ndarray, W: int) -> np.ndarray:
    """Expand a patch-level mask ``(..., P)`` to point level ``(..., W)``."""
    m = np.asarray(m)
    P = m.shape[-1]
    if W % P:
        raise IndivisibleWindow(f"window length {W} is not divisible by {P} patches")
    return np.repeat(m, W // P, axis=-1)


def combine_reconstructions(m: np.ndarray, recon_from_masked: np.ndarray, recon_from_complement: np.ndarray) -> np.ndarray:
    """Merge the two branch reconstructions.

    Each point is taken from the branch whose input had that point's patch
    masked out: ``(1 - M) * Recon(X_m) + M * Recon(X_bar_m)``.
    """
    a = np.asarray(recon_from_masked, dtype=np.float64)
    b = np.asarray(recon_from_complement, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"reconstruction shapes differ: {a.shape} vs {b.shape}")
    mp = broadcast_mask(m, a.shape[-1])
    return (1 - mp) * a + mp * b
