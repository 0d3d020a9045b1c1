"""Retrieval scoring, similarity heatmaps, channel saliency and image metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .images import ImageBuffer
from .tensor import ContractError, Tensor, l2_normalize

SSIM_WINDOW = 8
SSIM_K1, SSIM_K2 = 0.01, 0.03


class UndefinedVarianceError(ContractError):
    pass


@dataclass
class RetrievalReport:
    top1: float
    top5: float
    n_queries: int
    n_gallery: int
    modality: str = "image"
    per_class: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    seed: int | None = None
    config_hash: str | None = None

    def __post_init__(self):
        if self.top1 > self.top5 + 1e-12:
            raise ContractError("top-1 accuracy cannot exceed top-5")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalReport":
        return cls(**d)


def _unit_rows(x, name: str, tol: float = 1e-3) -> np.ndarray:
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be a 2-D array")
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        raise ContractError(f"{name} contains a zero row")
    if np.any(np.abs(norms - 1) > tol):
        raise ContractError(f"{name} rows must be unit-normalised")
    return a


def true_ranks(sims: np.ndarray, true_idx) -> np.ndarray:
    """0-based rank of each query's true item (ties resolved toward lower index)."""
    true_idx = np.asarray(true_idx)
    q = np.arange(len(true_idx))
    s_true = sims[q, true_idx][:, None]
    cols = np.arange(sims.shape[1])[None, :]
    ahead = (sims > s_true) | ((sims == s_true) & (cols < true_idx[:, None]))
    return ahead.sum(axis=1)


def topk_retrieval(queries, gallery, true_idx, ks=(1, 5), modality: str = "image",
                   labels=None, tags=None, seed=None, config_hash=None) -> RetrievalReport:
    """Rank the gallery by cosine similarity for every query."""
    q = _unit_rows(queries, "queries")
    g = _unit_rows(gallery, "gallery")
    true_idx = np.asarray(true_idx, dtype=np.int64)
    if len(true_idx) != len(q) or np.any(true_idx < 0) or np.any(true_idx >= len(g)):
        raise ContractError("true_idx must hold one valid gallery index per query")
    if len(g) < max(ks):
        raise ContractError(f"gallery of {len(g)} is smaller than k={max(ks)}")
    ranks = true_ranks(q @ g.T, true_idx)
    hits = {k: ranks < k for k in (1, 5)}
    labels = true_idx if labels is None else np.asarray(labels)
    per_class = {}
    for c in np.unique(labels):
        sel = labels == c
        per_class[str(int(c))] = {"n": int(sel.sum()), "top1_hits": int(hits[1][sel].sum()),
                                  "top5_hits": int(hits[5][sel].sum())}
    return RetrievalReport(float(hits[1].mean()), float(hits[5].mean()), len(q), len(g), modality,
                           per_class, dict(tags or {}), seed, config_hash)


@dataclass
class RSAMatrix:
    matrix: np.ndarray
    order: np.ndarray


def rsa_heatmap(emb, order=None) -> RSAMatrix:
    """Pairwise cosine similarities, rows/columns permuted by ``order``."""
    a = np.asarray(emb.data if isinstance(emb, Tensor) else emb, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ContractError("RSA input contains a zero row")
    a = a / norms
    order = np.arange(len(a)) if order is None else np.asarray(order)
    if sorted(order.tolist()) != list(range(len(a))):
        raise ContractError("order must be a permutation of the rows")
    a = a[order]
    return RSAMatrix(np.clip(a @ a.T, -1.0, 1.0), order)


def semantic_order(labels) -> np.ndarray:
    return np.argsort(np.asarray(labels), kind="stable")


def structural_complexity(img: ImageBuffer) -> float:
    """Mean gradient magnitude of the luma plane."""
    gy, gx = np.gradient(img.gray())
    return float(np.hypot(gx, gy).mean())


def complexity_order(images) -> np.ndarray:
    return np.argsort([structural_complexity(im) for im in images], kind="stable")


@dataclass
class Topography:
    scores: np.ndarray
    degenerate: bool


def saliency_topography(epoch, encoder, target) -> Topography:
    """Input-gradient saliency per channel for cos(encoder(epoch), target).

    ``encoder`` maps a (1, C, T) Tensor to (1, d); an ExpertParams is accepted
    too. Scores are mean |gradient| over time, scaled to a max of 1. A
    gradient that vanishes everywhere is reported with ``degenerate=True``.
    """
    if not callable(encoder):
        from .encoders import expert_forward
        params = encoder
        encoder = lambda x: expert_forward(x, params.branch, params)  # noqa: E731
    ep = np.asarray(epoch.data if isinstance(epoch, Tensor) else epoch)
    if ep.ndim != 2:
        raise ContractError("epoch must be (C, T)")
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if np.linalg.norm(t) == 0:
        raise ContractError("target must be nonzero")
    x = Tensor(ep[None].astype(np.float64), requires_grad=True)
    f = encoder(x)
    cos = (l2_normalize(f) * Tensor((t / np.linalg.norm(t))[None].astype(f.dtype))).sum()
    if cos.requires_grad:
        cos.backward()
    grad = np.zeros_like(ep, dtype=np.float64) if x.grad is None else x.grad[0]
    scores = np.abs(grad).mean(axis=1)
    peak = scores.max()
    if not peak > 0:
        return Topography(np.zeros_like(scores), True)
    return Topography(scores / peak, False)


def pixcorr(a: ImageBuffer, b: ImageBuffer) -> float:
    x = a.pixels.reshape(-1)
    y = b.pixels.reshape(-1)
    if x.shape != y.shape:
        raise ContractError("images must share dimensions")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise UndefinedVarianceError("pixel correlation of a constant image is undefined")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean SSIM over all 8x8 windows of the luma planes (dynamic range 1)."""
    x, y = a.gray(), b.gray()
    if x.shape != y.shape:
        raise ContractError("images must share dimensions")
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mx, my = wx.mean(axis=(-2, -1)), wy.mean(axis=(-2, -1))
    vx = (wx * wx).mean(axis=(-2, -1)) - mx * mx
    vy = (wy * wy).mean(axis=(-2, -1)) - my * my
    cxy = (wx * wy).mean(axis=(-2, -1)) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float((num / den).mean())
