"""Modality expert encoders: attention -> temporal/spatial conv -> projection.

Four branches (image, text, depth, edge) with fully separate parameters map
one brain epoch (C, T) to a ``d``-dimensional embedding.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import ParamSet, add_linear, linear, xavier_uniform
from .signals import MODALITIES, EpochBatch
from .tensor import ShapeError, Tensor, causal_depthwise_conv1d, gelu, matmul, softmax_rows

ENCODER_VARIANTS = {
    "attn_conv": dict(channel_attn=True, temporal_attn=True),
    "tsconv": dict(channel_attn=False, temporal_attn=False),
    "shallownet": dict(channel_attn=False, temporal_attn=False, kernel=13),
    "eegnet": dict(channel_attn=True, temporal_attn=False, kernel=3),
}


class ExpertParams(ParamSet):
    """Weights of one expert branch plus the dims they were built for."""

    def __init__(self, branch, C, T, d, kernel=7, conv_channels=32,
                 channel_attn=True, temporal_attn=True, tensors=None):
        super().__init__(tensors)
        self.branch = branch
        self.C, self.T, self.d = C, T, d
        self.kernel = kernel
        self.conv_channels = conv_channels
        self.channel_attn = channel_attn
        self.temporal_attn = temporal_attn

    def meta(self) -> dict:
        return dict(branch=self.branch, C=self.C, T=self.T, d=self.d, kernel=self.kernel,
                    conv_channels=self.conv_channels, channel_attn=self.channel_attn,
                    temporal_attn=self.temporal_attn)


def _init_branch(rng, branch, C, T, d, kernel, conv_channels, channel_attn, temporal_attn, dtype):
    p = ExpertParams(branch, C, T, d, kernel, conv_channels, channel_attn, temporal_attn)
    if channel_attn:
        for n in ("q", "k", "v"):
            add_linear(p, rng, f"ca.{n}", T, T, dtype)
    if temporal_attn:
        for n in ("q", "k", "v"):
            add_linear(p, rng, f"ta.{n}", C, C, dtype)
    p.add("conv.w", xavier_uniform(rng, C, kernel, dtype=dtype))
    p.add("conv.b", np.zeros(C, dtype=dtype))
    add_linear(p, rng, "mix", C, conv_channels, dtype)
    add_linear(p, rng, "proj1", conv_channels, d, dtype)
    add_linear(p, rng, "proj2", d, d, dtype)
    return p


def init_experts(seed: int, C: int, T: int, d: int = 1024, kernel: int = 7,
                 conv_channels: int = 32, variant: str = "attn_conv", dtype=np.float32) -> dict:
    """Xavier-uniform weights, zero biases, one independent stream per branch."""
    if min(C, T, d, kernel, conv_channels) < 1:
        raise ShapeError("expert dimensions must be positive")
    opts = {"kernel": kernel, **ENCODER_VARIANTS[variant]}
    streams = np.random.SeedSequence(seed).spawn(len(MODALITIES))
    return {m: _init_branch(np.random.default_rng(s), m, C, T, d, opts["kernel"], conv_channels,
                            opts["channel_attn"], opts["temporal_attn"], dtype)
            for m, s in zip(MODALITIES, streams)}


def self_attention(x: Tensor, params: ParamSet, prefix: str) -> Tensor:
    """Single-head, dimension-preserving self-attention with a residual add."""
    q = linear(x, params, prefix + ".q")
    k = linear(x, params, prefix + ".k")
    v = linear(x, params, prefix + ".v")
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(x.shape[-1]))
    return x + matmul(softmax_rows(scores), v)


def attend(x: Tensor, params: ExpertParams) -> Tensor:
    """Channel-axis attention, then time-axis attention; (B, C, T) in and out."""
    if params.channel_attn:
        x = self_attention(x, params, "ca")
    if params.temporal_attn:
        x = self_attention(x.swapaxes(1, 2), params, "ta").swapaxes(1, 2)
    return x


def ts_conv(x: Tensor, params: ExpertParams) -> Tensor:
    """Causal depthwise temporal conv + 1x1 channel mixing + GELU -> (B, T, F)."""
    h = causal_depthwise_conv1d(x, params["conv.w"], params["conv.b"])
    return gelu(linear(h.swapaxes(1, 2), params, "mix"))


def _as_input(x, dtype) -> Tensor:
    if isinstance(x, EpochBatch):
        x = x.signals
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def expert_forward(x, branch, params) -> Tensor:
    """Embed epochs with one expert branch.

    ``params`` is either the dict returned by :func:`init_experts` or the
    branch's own :class:`ExpertParams`. Input (B, C, T) -> output (B, d).
    """
    if branch == "fusion":
        raise ValueError("the fusion embedding is produced by the fusion encoder")
    p = params[branch] if isinstance(params, dict) else params
    if p.branch != branch:
        raise ValueError(f"parameters belong to branch {p.branch!r}, not {branch!r}")
    x = _as_input(x, p["conv.w"].dtype)
    if x.ndim != 3 or x.shape[1:] != (p.C, p.T):
        raise ShapeError(f"expected (B, {p.C}, {p.T}) input, got {x.shape}")
    h = ts_conv(attend(x, p), p).mean(axis=1)
    return linear(gelu(linear(h, p, "proj1")), p, "proj2")
