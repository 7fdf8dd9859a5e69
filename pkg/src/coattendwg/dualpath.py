"""Dual-path MambaFormer refinement and the second cross-attention stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .ablation import AblationFlags
from .coattention import GatedFeatures
from .layers import EVAL, DropoutConfig, MambaFormerLayerParams, MHAParams, mambaformer_encode, mha
from .tensor import ShapeError, Tensor


@dataclass
class DualPathParams:
    enc_text_path: list[MambaFormerLayerParams]
    enc_img_path: list[MambaFormerLayerParams]
    xattn_t: MHAParams
    xattn_i: MHAParams

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        dim: int,
        heads: int,
        depth: int = 2,
        kernel_size: int = 3,
        activation: str = "relu",
        attn_bias: bool = False,
    ) -> "DualPathParams":
        def stack():
            return [
                MambaFormerLayerParams.init(rng, dim, heads, kernel_size, activation, attn_bias)
                for _ in range(depth)
            ]

        text_path = stack()
        img_path = stack()
        return cls(
            enc_text_path=text_path,
            enc_img_path=img_path,
            xattn_t=MHAParams.init(rng, dim, heads, bias=attn_bias),
            xattn_i=MHAParams.init(rng, dim, heads, bias=attn_bias),
        )


@dataclass
class DualPathOutput:
    Z_text: Tensor
    Z_img: Tensor
    T_cross: Tensor
    I_cross: Tensor
    Z_text_final: Tensor
    Z_img_final: Tensor
    xattn_t_w: Optional[Tensor]
    xattn_i_w: Optional[Tensor]


def dual_path(
    params: DualPathParams,
    T_seq: Tensor,
    I_seq: Tensor,
    gated: GatedFeatures,
    drop: DropoutConfig = EVAL,
    rng: Optional[np.random.Generator] = None,
    flags: AblationFlags = AblationFlags(),
) -> DualPathOutput:
    """Refine gated features and align them with a second cross-attention.

    The text path encodes the gated *image* feature and adds the text
    projection; the image path mirrors it with the gated text feature.
    Cross-attention queries use the original projections.
    """
    shapes = {T_seq.shape, I_seq.shape, gated.T_gated.shape, gated.I_gated.shape}
    if len(shapes) != 1:
        raise ShapeError(f"dual path needs one common [B, L, D] shape, got {sorted(shapes)}")
    if flags.no_MF:
        Z_t2i, Z_i2t = gated.I_gated, gated.T_gated
    else:
        Z_t2i = mambaformer_encode(params.enc_text_path, gated.I_gated, drop, rng)
        Z_i2t = mambaformer_encode(params.enc_img_path, gated.T_gated, drop, rng)
    Z_text = Z_t2i + T_seq
    Z_img = Z_i2t + I_seq
    if flags.no_XA:
        zeros = np.zeros(T_seq.shape)
        T_cross, I_cross = T.Tensor(zeros), T.Tensor(zeros)
        w_t = w_i = None
    else:
        T_cross, w_t = mha(params.xattn_t, T_seq, I_seq, I_seq)
        I_cross, w_i = mha(params.xattn_i, I_seq, T_seq, T_seq)
    return DualPathOutput(
        Z_text=Z_text,
        Z_img=Z_img,
        T_cross=T_cross,
        I_cross=I_cross,
        Z_text_final=Z_text + T_cross,
        Z_img_final=Z_img + I_cross,
        xattn_t_w=w_t,
        xattn_i_w=w_i,
    )
