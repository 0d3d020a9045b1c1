"""Training objectives: similarity-category masked contrastive loss, a
symmetric InfoNCE baseline, and the trunk/heads alignment loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, log_softmax_rows, matmul

NEG_FILL = -1e9


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    k: int = 10
    lambda_mse: float = 1.0
    lambda_cos: float = 0.5
    lambda_reg: float = 1e-4
    mask_mode: str = "literal"  # or "neginf"

    def __post_init__(self):
        if self.tau <= 0 or self.k < 1:
            raise ContractError("need tau > 0 and k >= 1")
        if min(self.lambda_mse, self.lambda_cos, self.lambda_reg) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.mask_mode not in ("literal", "neginf"):
            raise ContractError(f"unknown mask mode {self.mask_mode!r}")


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _check_unit_rows(x: Tensor, name: str, tol: float = 1e-3) -> None:
    norms = np.linalg.norm(x.data.astype(np.float64), axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"{name} rows must be L2-normalised (max deviation {np.abs(norms - 1).max():.3g})")


def _pair_inputs(E, targets):
    E, targets = _tensor(E), _tensor(targets)
    if E.ndim != 2 or E.shape != targets.shape:
        raise ShapeError(f"embeddings {E.shape} and targets {targets.shape} must both be (B, d)")
    _check_unit_rows(E, "embedding")
    _check_unit_rows(targets, "target")
    return E, targets


def scm_mask(S: np.ndarray, labels, k: int) -> np.ndarray:
    """m_ij = 1 iff same label and j is among row i's top-k (ties -> lower index).

    The diagonal is always kept so every row contains its own positive.
    """
    y = np.asarray(labels)
    B = S.shape[0]
    order = np.argsort(-S, axis=1, kind="stable")[:, :k]
    top = np.zeros((B, B), dtype=bool)
    np.put_along_axis(top, order, True, axis=1)
    m = top & (y[:, None] == y[None, :])
    m[np.arange(B), np.arange(B)] = True
    return m


def scm_loss(E, targets, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Similarity-category masked loss.

    With S = E targets^T / tau and mask m, row i's probability of its own
    pair is exp(S_ii) / sum_l exp(S_il * m_il): masked-out entries add
    exp(0) = 1 to the denominator. ``mask_mode="neginf"`` drops them instead.
    The mask is a constant for differentiation.
    """
    E, targets = _pair_inputs(E, targets)
    B = E.shape[0]
    if B < 2:
        raise ContractError("scm_loss needs a batch of at least 2")
    if len(labels) != B:
        raise ShapeError("need one label per row")
    S = matmul(E, targets.T) * (1.0 / cfg.tau)
    m = scm_mask(S.data, labels, cfg.k)
    logits = S * Tensor(m.astype(S.dtype))
    if cfg.mask_mode == "neginf":
        logits = logits + Tensor(np.where(m, 0.0, NEG_FILL).astype(S.dtype))
    diag = log_softmax_rows(logits)[np.arange(B), np.arange(B)]
    return -diag.mean()


def infonce_loss(E, targets, tau: float = 0.07) -> Tensor:
    """Symmetric cross-entropy with matched pairs on the diagonal."""
    E, targets = _pair_inputs(E, targets)
    B = E.shape[0]
    S = matmul(E, targets.T) * (1.0 / tau)
    idx = np.arange(B)
    fwd = log_softmax_rows(S)[idx, idx].mean()
    bwd = log_softmax_rows(S.T)[idx, idx].mean()
    return (fwd + bwd) * -0.5


def sth_loss(e_hat, v, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum over modalities of weighted MSE, cosine distance and norm penalty,
    averaged over the batch. Inputs are (B, M, d)."""
    e_hat, v = _tensor(e_hat), _tensor(v)
    if e_hat.ndim != 3 or e_hat.shape != v.shape:
        raise ShapeError(f"e_hat {e_hat.shape} and targets {v.shape} must both be (B, M, d)")
    diff = e_hat - v
    mse = (diff * diff).sum(axis=-1)
    dot = (e_hat * v).sum(axis=-1)
    sq_e = (e_hat * e_hat).sum(axis=-1)
    sq_v = (v * v).sum(axis=-1)
    cos = dot / ((sq_e * sq_v) ** 0.5)
    per = mse * cfg.lambda_mse + (1.0 - cos) * cfg.lambda_cos + sq_e * cfg.lambda_reg
    return per.sum(axis=1).mean()
