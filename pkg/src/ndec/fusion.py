"""Cross-modal fusion encoder over the four expert embeddings."""

from __future__ import annotations

import math

import numpy as np

from .nn import ParamSet, add_linear, add_norm, linear
from .signals import MODALITIES
from .tensor import ShapeError, Tensor, gelu, layer_norm, matmul, softmax_rows, stack

LN_EPS = 1e-5


class FusionParams(ParamSet):
    def __init__(self, d_in, d, heads=8, ffn_mult=4, n_layers=2, tensors=None):
        super().__init__(tensors)
        if d % heads:
            raise ShapeError(f"hidden size {d} is not divisible by {heads} heads")
        self.d_in, self.d, self.heads = d_in, d, heads
        self.ffn_mult, self.n_layers = ffn_mult, n_layers

    def meta(self) -> dict:
        return dict(d_in=self.d_in, d=self.d, heads=self.heads, ffn_mult=self.ffn_mult,
                    n_layers=self.n_layers)


def init_fusion(seed: int, d_in: int, d: int = 1024, heads: int = 8, ffn_mult: int = 4,
                n_layers: int = 2, dtype=np.float32) -> FusionParams:
    rng = np.random.default_rng(seed)
    p = FusionParams(d_in, d, heads, ffn_mult, n_layers)
    for m in MODALITIES:
        add_linear(p, rng, f"in.{m}", d_in, d, dtype)
        add_norm(p, f"in.{m}.ln", d, dtype)
    p.add("pos", (0.02 * rng.standard_normal((len(MODALITIES), d))).astype(dtype))
    for l in range(n_layers):
        for n in ("q", "k", "v", "o"):
            add_linear(p, rng, f"layer{l}.{n}", d, d, dtype)
        add_norm(p, f"layer{l}.ln1", d, dtype)
        add_linear(p, rng, f"layer{l}.ffn1", d, ffn_mult * d, dtype)
        add_linear(p, rng, f"layer{l}.ffn2", ffn_mult * d, d, dtype)
        add_norm(p, f"layer{l}.ln2", d, dtype)
    add_linear(p, rng, "out1", d, d, dtype)
    add_linear(p, rng, "out2", d, d, dtype)
    return p


def _ln(x, p, prefix):
    return layer_norm(x, p[prefix + ".g"], p[prefix + ".b"], LN_EPS)


def tokenize_project(z_img, z_txt, z_depth, z_edge, params: FusionParams) -> Tensor:
    """Project each modality, normalise, GELU, stack in fixed order, add position codes."""
    toks = []
    for m, z in zip(MODALITIES, (z_img, z_txt, z_depth, z_edge)):
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=params["pos"].dtype))
        if z.ndim != 2 or z.shape[1] != params.d_in:
            raise ShapeError(f"{m} embedding must be (B, {params.d_in}), got {z.shape}")
        toks.append(gelu(_ln(linear(z, params, f"in.{m}"), params, f"in.{m}.ln")))
    return stack(toks, axis=1) + params["pos"]


def multi_head_attention(x: Tensor, p: ParamSet, prefix: str, heads: int) -> Tensor:
    B, N, d = x.shape
    dh = d // heads

    def split(t):
        return t.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(x, p, prefix + ".q"))
    k = split(linear(x, p, prefix + ".k"))
    v = split(linear(x, p, prefix + ".v"))
    att = softmax_rows(matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)))
    out = matmul(att, v).transpose(0, 2, 1, 3).reshape(B, N, d)
    return linear(out, p, prefix + ".o")


def encoder_layer(h: Tensor, p: FusionParams, l: int) -> Tensor:
    """Post-norm block: LN(h + MSA(h)), then LN(h + FFN(h))."""
    h = _ln(h + multi_head_attention(h, p, f"layer{l}", p.heads), p, f"layer{l}.ln1")
    ffn = linear(gelu(linear(h, p, f"layer{l}.ffn1")), p, f"layer{l}.ffn2")
    return _ln(h + ffn, p, f"layer{l}.ln2")


def fusion_forward(tokens, params: FusionParams) -> Tensor:
    """(B, 4, d) tokens -> (B, d) fused embedding: encoder, mean pool, residual MLP."""
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens))
    if tokens.ndim != 3 or tokens.shape[1:] != (len(MODALITIES), params.d):
        raise ShapeError(f"expected (B, {len(MODALITIES)}, {params.d}) tokens, got {tokens.shape}")
    h = tokens
    for l in range(params.n_layers):
        h = encoder_layer(h, params, l)
    agg = h.mean(axis=1)
    return agg + linear(gelu(linear(agg, params, "out1")), params, "out2")


def zero_slot(tokens, index: int) -> Tensor:
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens))
    keep = np.ones(tokens.shape[1:], dtype=tokens.dtype)
    keep[index] = 0
    return tokens * Tensor(keep)


def modality_mask(tokens, rng: np.random.Generator):
    """Zero one uniformly drawn modality slot for the whole batch."""
    index = int(rng.integers(len(MODALITIES)))
    return zero_slot(tokens, index), index


def fuse(z: dict, params: FusionParams, mask_index=None) -> Tensor:
    tokens = tokenize_project(*(z[m] for m in MODALITIES), params)
    if mask_index is not None:
        tokens = zero_slot(tokens, mask_index)
    return fusion_forward(tokens, params)
