"""Uncertainty-weighted masking: foveated blur plus an EMA score memory.

The training loop keeps one smoothed brain/image similarity per sample.
Samples that score well above the population get a blurrier periphery on
their image target, poorly aligned ones get a sharper one.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .images import ImageBuffer
from .tensor import ContractError

GRID = 16


@dataclass(frozen=True)
class FoveaParams:
    r_centre: float = 1.0
    r_edge: float = 0.0
    lam: float = 3.0

    def __post_init__(self):
        if not (0.0 <= self.r_edge <= self.r_centre <= 1.0):
            raise ContractError("need 0 <= r_edge <= r_centre <= 1")
        if self.lam < 0:
            raise ContractError("lambda must be non-negative")


@dataclass(frozen=True)
class UMPolicy:
    sigma0: float = 6.0
    c: float = 6.0
    z: float = 1.0
    gamma: float = 0.3

    def __post_init__(self):
        if self.sigma0 <= 0 or self.c < 0 or self.z <= 0:
            raise ContractError("need sigma0 > 0, c >= 0, z > 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError("gamma must lie in (0, 1]")
        if self.sigma0 - self.c < 0:
            raise ContractError("sigma0 - c must be non-negative")

    @property
    def levels(self) -> tuple:
        return (self.sigma0 - self.c, self.sigma0, self.sigma0 + self.c)


def fovea_mask(width: int, height: int, params: FoveaParams) -> np.ndarray:
    """Radial weight map, ``r_centre`` at the centre decaying towards ``r_edge``.

    Distances are measured from the geometric centre and scaled by the
    centre-to-corner distance, so corner pixels sit at ``d/d_max = 1``.
    """
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    yy, xx = np.mgrid[0:height, 0:width]
    d = np.hypot(yy - cy, xx - cx)
    d_max = math.hypot(cy, cx)
    ratio = d / d_max if d_max > 0 else np.zeros_like(d)
    # r_edge + (r_centre - r_edge) * exp(-lam * ratio), arranged to hit r_centre exactly at the centre
    return params.r_centre + (params.r_centre - params.r_edge) * np.expm1(-params.lam * ratio)


def gaussian_kernel(sigma: float) -> np.ndarray:
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _blur_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for j, w in enumerate(k):
        out += w * np.take(p, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    """Separable Gaussian blur, kernel truncated at ceil(3 sigma), edges clamped."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    if sigma == 0:
        return ImageBuffer(img.pixels.copy())
    k = gaussian_kernel(sigma)
    out = _blur_axis(_blur_axis(img.pixels, k, 0), k, 1)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def apply_foveation(img: ImageBuffer, params: FoveaParams, sigma: float) -> ImageBuffer:
    """Blend the sharp image with its blurred copy through the fovea mask."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    if sigma == 0:
        return ImageBuffer(img.pixels.copy())
    m = fovea_mask(img.width, img.height, params)[:, :, None]
    blurred = gaussian_blur(img, sigma).pixels
    return ImageBuffer(np.clip(m * img.pixels + (1.0 - m) * blurred, 0.0, 1.0))


class BankStats(NamedTuple):
    mean: float
    std: float
    count: int


class MemoryBank:
    """Per-sample smoothed similarity scores.

    The first score seen for a sample is stored as-is; later ones are
    blended with ``gamma``. Mean and (population) std only cover samples
    observed at least once.
    """

    def __init__(self, n: int, gamma: float = 0.3):
        if not 0.0 < gamma <= 1.0:
            raise ContractError("gamma must lie in (0, 1]")
        self.gamma = gamma
        self.scores = np.zeros(n, dtype=np.float64)
        self.initialized = np.zeros(n, dtype=bool)

    def __len__(self) -> int:
        return len(self.scores)

    def stats(self) -> BankStats:
        vals = self.scores[self.initialized]
        if len(vals) == 0:
            return BankStats(0.0, 0.0, 0)
        return BankStats(float(vals.mean()), float(vals.std()), int(len(vals)))

    def state(self) -> dict:
        return {"scores": self.scores.copy(), "initialized": self.initialized.copy(),
                "gamma": np.array(self.gamma)}

    @classmethod
    def from_state(cls, state: dict) -> "MemoryBank":
        bank = cls(len(state["scores"]), float(state["gamma"]))
        bank.scores = np.array(state["scores"], dtype=np.float64)
        bank.initialized = np.array(state["initialized"], dtype=bool)
        return bank


def ema_update(bank: MemoryBank, sample_id: int, s: float) -> float:
    if not 0 <= sample_id < len(bank):
        raise ContractError(f"unknown sample id {sample_id}")
    if not math.isfinite(s):
        raise ContractError("score must be finite")
    if bank.initialized[sample_id]:
        s_hat = bank.gamma * s + (1.0 - bank.gamma) * bank.scores[sample_id]
    else:
        s_hat = float(s)
        bank.initialized[sample_id] = True
    bank.scores[sample_id] = s_hat
    return float(s_hat)


def select_sigma(s_hat: float, stats: BankStats, policy: UMPolicy) -> float:
    """Pick one of three blur radii from where ``s_hat`` sits in the bank."""
    if stats.count < 2:
        return policy.sigma0
    lo = stats.mean - policy.z * stats.std
    hi = stats.mean + policy.z * stats.std
    if s_hat < lo:
        return policy.sigma0 - policy.c
    if s_hat > hi:
        return policy.sigma0 + policy.c
    return policy.sigma0


def _bin_edges(n: int, bins: int) -> list:
    edges = []
    for i in range(bins):
        a = (i * n) // bins
        b = max(a + 1, ((i + 1) * n) // bins)
        edges.append((min(a, n - 1), min(b, n)))
    return edges


def image_grid(img: ImageBuffer, size: int = GRID) -> np.ndarray:
    """Area-averaged grayscale thumbnail of ``size`` x ``size``."""
    g = img.gray()
    rows = _bin_edges(g.shape[0], size)
    cols = _bin_edges(g.shape[1], size)
    out = np.empty((size, size))
    for i, (r0, r1) in enumerate(rows):
        band = g[r0:r1].mean(axis=0)
        for j, (c0, c1) in enumerate(cols):
            out[i, j] = band[c0:c1].mean()
    return out


@functools.lru_cache(maxsize=8)
def _projection(seed: int, d_target: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((GRID * GRID, d_target)) / math.sqrt(d_target)


def stub_encode(img: ImageBuffer, seed: int = 0, d_target: int = 1024) -> np.ndarray:
    """Deterministic stand-in for a frozen image encoder.

    Thumbnail -> subtract its mean -> fixed random projection -> unit norm.
    A constant image falls back to projecting the raw (uncentred) grid.
    """
    grid = image_grid(img).reshape(-1)
    centred = grid - grid.mean()
    if not np.any(np.abs(centred) > 1e-12):
        centred = np.ones_like(grid)
    v = centred @ _projection(seed, d_target)
    return v / np.linalg.norm(v)


def similarity_score(e_brain, v_img) -> float:
    e = np.asarray(e_brain, dtype=np.float64).reshape(-1)
    v = np.asarray(v_img, dtype=np.float64).reshape(-1)
    ne, nv = np.linalg.norm(e), np.linalg.norm(v)
    if ne == 0 or nv == 0:
        raise ContractError("cosine similarity of a zero vector is undefined")
    return float(np.clip(e @ v / (ne * nv), -1.0, 1.0))
