"""Linear, multi-head attention, MambaFormer encoder layers and dropout."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ACTIVATIONS = {"relu": T.relu, "gelu": T.gelu}


def _uniform(rng: np.random.Generator, scale: float, shape) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


@dataclass
class LinearParams:
    W: Tensor  # [out, in]
    b: Tensor  # [out]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int) -> "LinearParams":
        s = math.sqrt(1.0 / in_dim)
        return cls(W=_uniform(rng, s, (out_dim, in_dim)), b=_uniform(rng, s, (out_dim,)))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


def linear(params: LinearParams, x: Tensor) -> Tensor:
    """``x W^T + b`` over the trailing axis of ``x``."""
    if x.shape[-1] != params.in_dim:
        raise ShapeError(
            f"linear expects trailing dim {params.in_dim}, got input shape {x.shape}"
        )
    if x.ndim == 1:
        return T.reshape(linear(params, T.reshape(x, (1, -1))), (-1,))
    return T.matmul(x, T.transpose(params.W, None)) + params.b


@dataclass
class MHAParams:
    heads: int
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor
    b_Q: Optional[Tensor] = None
    b_K: Optional[Tensor] = None
    b_V: Optional[Tensor] = None
    b_O: Optional[Tensor] = None

    @classmethod
    def init(
        cls, rng: np.random.Generator, dim: int, heads: int, bias: bool = False
    ) -> "MHAParams":
        if heads <= 0 or dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        s = math.sqrt(1.0 / dim)
        weights = {n: _uniform(rng, s, (dim, dim)) for n in ("W_Q", "W_K", "W_V", "W_O")}
        biases = {}
        if bias:
            biases = {n: _uniform(rng, s, (dim,)) for n in ("b_Q", "b_K", "b_V", "b_O")}
        return cls(heads=heads, **weights, **biases)

    @property
    def dim(self) -> int:
        return self.W_Q.shape[0]


def _proj(x: Tensor, W: Tensor, b: Optional[Tensor]) -> Tensor:
    y = T.matmul(x, T.transpose(W, None))
    return y if b is None else y + b


def mha(params: MHAParams, q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over ``params.heads`` heads.

    Args:
        q: ``[B, Lq, D]`` queries.
        k, v: ``[B, Lk, D]`` keys and values.

    Returns:
        ``(out, attn)`` with ``out`` of shape ``[B, Lq, D]`` and the softmaxed
        weights ``attn`` of shape ``[B, heads, Lq, Lk]``.
    """
    D, h = params.dim, params.heads
    if D % h:
        raise ShapeError(f"model dim {D} is not divisible by {h} heads")
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError(f"mha expects [B, L, D] inputs, got {q.shape}, {k.shape}, {v.shape}")
    B, Lq, _ = q.shape
    Lk = k.shape[1]
    if Lk == 0:
        raise ShapeError("mha needs at least one key")
    if k.shape != v.shape or k.shape[0] != B or q.shape[2] != D or k.shape[2] != D:
        raise ShapeError(f"mha shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}, D={D}")
    dh = D // h

    def heads_first(x: Tensor, L: int) -> Tensor:
        return T.transpose(T.reshape(x, (B, L, h, dh)), (0, 2, 1, 3))

    Q = heads_first(_proj(q, params.W_Q, params.b_Q), Lq)
    K = heads_first(_proj(k, params.W_K, params.b_K), Lk)
    V = heads_first(_proj(v, params.W_V, params.b_V), Lk)
    scores = T.matmul(Q, T.transpose(K, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(attn, V), (0, 2, 1, 3)), (B, Lq, D))
    return _proj(ctx, params.W_O, params.b_O), attn


@dataclass(frozen=True)
class DropoutConfig:
    p: float = 0.0
    mode: str = "eval"

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout p must lie in [0, 1), got {self.p}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode must be 'train' or 'eval', got {self.mode!r}")


EVAL = DropoutConfig(0.0, "eval")


def dropout(cfg: DropoutConfig, x: Tensor, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` in train mode."""
    if cfg.mode == "eval" or cfg.p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= cfg.p
    return x * (keep / (1.0 - cfg.p))


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, dim: int) -> "LayerNormParams":
        return cls(Tensor(np.ones(dim), requires_grad=True), Tensor(np.zeros(dim), requires_grad=True))


def layer_norm(params: LayerNormParams, x: Tensor, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, params.gamma, params.beta, eps)


@dataclass
class MambaFormerLayerParams:
    kernel: Tensor  # [k, D, D]
    conv_bias: Tensor  # [D]
    self_attn: MHAParams
    ln1: LayerNormParams
    ln2: LayerNormParams
    activation: str = "relu"

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        dim: int,
        heads: int,
        kernel_size: int = 3,
        activation: str = "relu",
        attn_bias: bool = False,
    ) -> "MambaFormerLayerParams":
        if kernel_size % 2 == 0:
            raise ValueError(f"MambaFormer kernel size must be odd, got {kernel_size}")
        s = math.sqrt(1.0 / (kernel_size * dim))
        return cls(
            kernel=_uniform(rng, s, (kernel_size, dim, dim)),
            conv_bias=_uniform(rng, s, (dim,)),
            self_attn=MHAParams.init(rng, dim, heads, bias=attn_bias),
            ln1=LayerNormParams.init(dim),
            ln2=LayerNormParams.init(dim),
            activation=activation,
        )


def mambaformer_layer(
    layer: MambaFormerLayerParams,
    x: Tensor,
    drop: DropoutConfig = EVAL,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, Tensor]:
    """One pre-norm block: local conv branch, then global self-attention branch."""
    act = ACTIVATIONS[layer.activation]
    u = x + dropout(drop, act(T.conv1d_same(layer_norm(layer.ln1, x), layer.kernel, layer.conv_bias)), rng)
    z = layer_norm(layer.ln2, u)
    attn_out, attn = mha(layer.self_attn, z, z, z)
    return u + dropout(drop, attn_out, rng), attn


def mambaformer_encode(
    layers: list[MambaFormerLayerParams],
    x: Tensor,
    drop: DropoutConfig = EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Stack of MambaFormer layers; an empty stack is the identity."""
    for layer in layers:
        x, _ = mambaformer_layer(layer, x, drop, rng)
    return x
