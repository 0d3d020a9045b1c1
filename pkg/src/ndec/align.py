"""Shared-trunk and per-modality heads alignment."""

from __future__ import annotations

import numpy as np

from .nn import AdamW, ParamSet, add_linear, add_norm, linear
from .objectives import LossConfig, sth_loss
from .signals import MODALITIES
from .tensor import (ContractError, NonFiniteError, ShapeError, Tensor, concat, l2_normalize,
                     layer_norm, no_grad, silu, stack)

LN_EPS = 1e-5


class TrainingDiverged(RuntimeError):
    """A loss or gradient went non-finite; parameters were left untouched."""


class STHParams(ParamSet):
    def __init__(self, d_in, d, d_out=None, n_blocks=4, tensors=None):
        super().__init__(tensors)
        self.d_in, self.d = d_in, d
        self.d_out = d if d_out is None else d_out
        self.n_blocks = n_blocks

    def meta(self) -> dict:
        return dict(d_in=self.d_in, d=self.d, d_out=self.d_out, n_blocks=self.n_blocks)


def init_sth(seed: int, d_in: int, d: int = 1024, d_out=None, n_blocks: int = 4,
             dtype=np.float32) -> STHParams:
    rng = np.random.default_rng(seed)
    p = STHParams(d_in, d, d_out, n_blocks)
    width = len(MODALITIES) * d_in
    for l in range(n_blocks):
        add_linear(p, rng, f"trunk{l}", width if l == 0 else d, d, dtype)
        add_norm(p, f"trunk{l}.ln", d, dtype)
    for m in MODALITIES:
        add_linear(p, rng, f"head.{m}.1", d, d, dtype)
        add_linear(p, rng, f"head.{m}.2", d, p.d_out, dtype)
    return p


def _cat_inputs(embs, params: STHParams, drop=None) -> Tensor:
    parts = []
    for i, e in enumerate(embs):
        e = e if isinstance(e, Tensor) else Tensor(np.asarray(e, dtype=params["trunk0.w"].dtype))
        if e.ndim != 2 or e.shape[1] != params.d_in:
            raise ShapeError(f"{MODALITIES[i]} embedding must be (B, {params.d_in}), got {e.shape}")
        if drop is not None and i in drop:
            e = Tensor(np.zeros(e.shape, dtype=e.dtype))
        parts.append(e)
    return concat(parts, axis=1)


def sth_forward(e_img, e_txt, e_depth, e_edge, params: STHParams, drop=None):
    """Return ({modality: unit-norm aligned embedding}, trunk feature f).

    ``drop`` lists slot indices whose input is replaced by zeros.
    """
    h = _cat_inputs((e_img, e_txt, e_depth, e_edge), params, drop)
    for l in range(params.n_blocks):
        h = silu(layer_norm(linear(h, params, f"trunk{l}"), params[f"trunk{l}.ln.g"],
                            params[f"trunk{l}.ln.b"], LN_EPS))
    out = {m: l2_normalize(linear(silu(linear(h, params, f"head.{m}.1")), params, f"head.{m}.2"))
           for m in MODALITIES}
    return out, h


def sth_train_step(embeddings: dict, targets: dict, params: STHParams, opt: AdamW,
                   rng: np.random.Generator, cfg: LossConfig = LossConfig(), dropout: bool = True):
    """One optimisation step; returns (loss value, dropped slot or None)."""
    for m in MODALITIES:
        norms = np.linalg.norm(targets[m], axis=1)
        if np.any(np.abs(norms - 1) > 1e-3):
            raise ContractError(f"{m} targets must be unit-norm")
    drop = int(rng.integers(len(MODALITIES))) if dropout else None
    params.zero_grad()
    try:
        e_hat, _ = sth_forward(*(embeddings[m] for m in MODALITIES), params,
                               drop=None if drop is None else (drop,))
        pred = stack([e_hat[m] for m in MODALITIES], axis=1)
        v = np.stack([targets[m] for m in MODALITIES], axis=1).astype(pred.dtype)
        loss = sth_loss(pred, v, cfg)
        loss.backward()
        opt.check_grads()
    except NonFiniteError as exc:
        params.zero_grad()
        raise TrainingDiverged(f"alignment step produced non-finite values: {exc}") from exc
    opt.step()
    return float(loss.data), drop


def sth_infer(embeddings: dict, params: STHParams, modality=None, mode: str = "all"):
    """Aligned embeddings without dropout.

    ``mode="single"`` zero-fills every slot except ``modality``.
    """
    if mode not in ("all", "single"):
        raise ContractError(f"unknown inference mode {mode!r}")
    drop = None
    if mode == "single":
        if modality is None:
            raise ContractError("single-modality inference needs a modality")
        drop = tuple(i for i, m in enumerate(MODALITIES) if m != modality)
    with no_grad():
        out, _ = sth_forward(*(embeddings[m] for m in MODALITIES), params, drop=drop)
    out = {m: t.data for m, t in out.items()}
    return out if modality is None else out[modality]
