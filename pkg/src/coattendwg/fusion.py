"""Mixture-of-experts fusion head and linear classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (
    ACTIVATIONS,
    EVAL,
    DropoutConfig,
    LayerNormParams,
    LinearParams,
    MHAParams,
    dropout,
    layer_norm,
    linear,
    mha,
)
from .tensor import ShapeError, Tensor


@dataclass
class ExpertFusionParams:
    fusion: LinearParams  # [D, 2D]
    gate: LinearParams  # [E, 2D]
    refine: MHAParams
    final_ln: LayerNormParams
    expert_proj: Optional[list[LinearParams]] = None
    activation: str = "relu"

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        dim: int,
        refine_heads: int,
        experts: int = 2,
        activation: str = "relu",
        attn_bias: bool = False,
    ) -> "ExpertFusionParams":
        if experts < 2:
            raise ValueError(f"expert fusion needs at least 2 experts, got {experts}")
        fusion = LinearParams.init(rng, 2 * dim, dim)
        gate = LinearParams.init(rng, 2 * dim, experts)
        refine = MHAParams.init(rng, dim, refine_heads, bias=attn_bias)
        proj = None
        if experts > 2:
            proj = [LinearParams.init(rng, 2 * dim, dim) for _ in range(experts)]
        return cls(fusion, gate, refine, LayerNormParams.init(dim), proj, activation)

    @property
    def experts(self) -> int:
        return self.gate.out_dim


@dataclass
class FusionTrace:
    g: Tensor  # [B, E]
    F: Tensor
    S: Tensor
    A: Tensor
    E_out: Tensor
    refine_attn: Optional[Tensor] = None
    learned_experts: bool = False
    extra: dict = field(default_factory=dict)


def expert_fuse(
    params: ExpertFusionParams,
    Z_text_final: Tensor,
    Z_img_final: Tensor,
    drop: DropoutConfig = EVAL,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, FusionTrace]:
    """Fuse two ``[B, D]`` modality representations into one ``[B, D]`` vector.

    With two experts the experts are the inputs themselves and the softmax
    gate interpolates between them. With more, each expert is a learned
    projection of the concatenation. The refinement attention runs per sample
    on a length-1 sequence.
    """
    if Z_text_final.ndim != 2 or Z_text_final.shape != Z_img_final.shape:
        raise ShapeError(
            f"expert fusion expects two [B, D] inputs, got {Z_text_final.shape} and {Z_img_final.shape}"
        )
    E = params.experts
    n_proj = 0 if params.expert_proj is None else len(params.expert_proj)
    if (E == 2 and n_proj not in (0, 2)) or (E > 2 and n_proj != E):
        raise ShapeError(f"gate has {E} experts but {n_proj} expert projections were given")
    B, D = Z_text_final.shape

    C = T.concat([Z_text_final, Z_img_final], axis=-1)
    F = dropout(drop, ACTIVATIONS[params.activation](linear(params.fusion, C)), rng)
    g = T.softmax(linear(params.gate, C), axis=-1)
    if n_proj:
        experts = [linear(p, C) for p in params.expert_proj]
    else:
        experts = [Z_text_final, Z_img_final]
    S = g[:, 0:1] * experts[0]
    for i in range(1, E):
        S = S + g[:, i : i + 1] * experts[i]

    S_seq = T.reshape(S, (B, 1, D))
    A_seq, refine_attn = mha(params.refine, S_seq, S_seq, S_seq)
    A = T.reshape(A_seq, (B, D))
    E_out = layer_norm(params.final_ln, F + S + A)
    return E_out, FusionTrace(g, F, S, A, E_out, refine_attn, learned_experts=bool(n_proj))


def concat_fuse(head: LinearParams, Z_text_final: Tensor, Z_img_final: Tensor) -> Tensor:
    """Plain concatenation + linear map to ``D``; stands in when expert fusion is ablated."""
    return linear(head, T.concat([Z_text_final, Z_img_final], axis=-1))


def classify(params: LinearParams, E_out: Tensor) -> Tensor:
    """Class logits ``[B, C]``."""
    return linear(params, E_out)


def predict(logits: Tensor) -> np.ndarray:
    return np.argmax(logits.data, axis=-1)


def probabilities(logits: Tensor) -> np.ndarray:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
