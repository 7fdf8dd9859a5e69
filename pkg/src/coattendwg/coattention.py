"""Shared-space projection and bidirectional co-attention with dimension-wise gating."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .ablation import AblationFlags
from .layers import LinearParams, MHAParams, linear, mha
from .tensor import ShapeError, Tensor


@dataclass
class ProjectionParams:
    text_proj: LinearParams
    img_proj: LinearParams

    @classmethod
    def init(cls, rng: np.random.Generator, d_text: int, d_img: int, dim: int) -> "ProjectionParams":
        return cls(LinearParams.init(rng, d_text, dim), LinearParams.init(rng, d_img, dim))


@dataclass
class CoAttenParams:
    attn_t2i: MHAParams
    attn_i2t: MHAParams
    gate_t: LinearParams
    gate_i: LinearParams

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int, attn_bias: bool = False) -> "CoAttenParams":
        return cls(
            attn_t2i=MHAParams.init(rng, dim, heads, bias=attn_bias),
            attn_i2t=MHAParams.init(rng, dim, heads, bias=attn_bias),
            gate_t=LinearParams.init(rng, dim, dim),
            gate_i=LinearParams.init(rng, dim, dim),
        )


@dataclass
class GatedFeatures:
    """Intermediates of the co-attention stage.

    Gates and attention weights are ``None`` when the corresponding stage is
    ablated.
    """

    A_t2i: Tensor
    A_i2t: Tensor
    G_t: Optional[Tensor]
    G_i: Optional[Tensor]
    T_gated: Tensor
    I_gated: Tensor
    attn_t2i_w: Optional[Tensor]
    attn_i2t_w: Optional[Tensor]


def project(params: ProjectionParams, text_feat: Tensor, img_feat: Tensor) -> tuple[Tensor, Tensor]:
    """Map both modalities into the shared space as ``[B, L, D]`` sequences.

    ``[B, d]`` inputs become length-1 sequences; ``[B, L, d]`` inputs keep
    their token axis.
    """
    text_feat, img_feat = T.as_tensor(text_feat), T.as_tensor(img_feat)
    if text_feat.shape[-1] != params.text_proj.in_dim:
        raise ShapeError(
            f"text features have dim {text_feat.shape[-1]}, expected {params.text_proj.in_dim}"
        )
    if img_feat.shape[-1] != params.img_proj.in_dim:
        raise ShapeError(
            f"image features have dim {img_feat.shape[-1]}, expected {params.img_proj.in_dim}"
        )
    if text_feat.shape[0] != img_feat.shape[0]:
        raise ShapeError(f"batch mismatch: {text_feat.shape} vs {img_feat.shape}")
    t = linear(params.text_proj, text_feat)
    i = linear(params.img_proj, img_feat)
    if t.ndim == 2:
        t = T.reshape(t, (t.shape[0], 1, t.shape[1]))
    if i.ndim == 2:
        i = T.reshape(i, (i.shape[0], 1, i.shape[1]))
    return t, i


def coattend(
    params: CoAttenParams,
    T_seq: Tensor,
    I_seq: Tensor,
    flags: AblationFlags = AblationFlags(),
) -> GatedFeatures:
    if T_seq.shape != I_seq.shape:
        raise ShapeError(f"co-attention needs matching shapes, got {T_seq.shape} and {I_seq.shape}")
    if flags.no_CA:
        A_t2i, A_i2t, w_t2i, w_i2t = T_seq, I_seq, None, None
    else:
        A_t2i, w_t2i = mha(params.attn_t2i, T_seq, I_seq, I_seq)
        A_i2t, w_i2t = mha(params.attn_i2t, I_seq, T_seq, T_seq)
    if flags.no_FF:
        G_t = G_i = None
        T_gated, I_gated = A_t2i, A_i2t
    else:
        G_t = T.sigmoid(linear(params.gate_t, A_t2i))
        G_i = T.sigmoid(linear(params.gate_i, A_i2t))
        T_gated = G_t * A_t2i
        I_gated = G_i * A_i2t
    return GatedFeatures(A_t2i, A_i2t, G_t, G_i, T_gated, I_gated, w_t2i, w_i2t)
