"""Model configuration, parameter tree and the end-to-end forward pass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from . import tensor as T
from .ablation import AblationFlags
from .coattention import CoAttenParams, GatedFeatures, ProjectionParams, coattend, project
from .dualpath import DualPathOutput, DualPathParams, dual_path
from .fusion import ExpertFusionParams, FusionTrace, classify, concat_fuse, expert_fuse
from .layers import DropoutConfig, LinearParams
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    """A configuration violates its invariants."""


@dataclass(frozen=True)
class ModelConfig:
    D: int = 64
    D_text: int = 768
    D_img: int = 2048
    L: int = 1
    fusion_heads: int = 8
    refine_heads: int = 4
    experts: int = 2
    mf_kernel: int = 3
    mf_depth: int = 2
    dropout: float = 0.1
    num_classes: int = 2
    activation: str = "relu"
    attn_bias: bool = False
    ablations: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("D", "D_text", "D_img", "L", "fusion_heads", "refine_heads", "mf_kernel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.D % self.fusion_heads:
            raise ConfigError(f"D={self.D} is not divisible by fusion_heads={self.fusion_heads}")
        if self.D % self.refine_heads:
            raise ConfigError(f"D={self.D} is not divisible by refine_heads={self.refine_heads}")
        if self.mf_kernel % 2 == 0:
            raise ConfigError(f"mf_kernel must be odd, got {self.mf_kernel}")
        if self.mf_depth < 0:
            raise ConfigError(f"mf_depth must be >= 0, got {self.mf_depth}")
        if self.experts < 2:
            raise ConfigError(f"experts must be >= 2, got {self.experts}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"activation must be relu or gelu, got {self.activation!r}")


@dataclass
class ModelParams:
    projection: ProjectionParams
    coattn: CoAttenParams
    dualpath: DualPathParams
    fusion: ExpertFusionParams
    concat_head: LinearParams  # used only when expert fusion is ablated
    classifier: LinearParams


def init_params(cfg: ModelConfig, seed: Optional[int] = None) -> ModelParams:
    """Draw every learnable tensor from a generator seeded by ``cfg.seed``.

    Every submodule is created regardless of ablation flags, so variants that
    share a seed share weights wherever shapes agree.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    D = cfg.D
    return ModelParams(
        projection=ProjectionParams.init(rng, cfg.D_text, cfg.D_img, D),
        coattn=CoAttenParams.init(rng, D, cfg.fusion_heads, cfg.attn_bias),
        dualpath=DualPathParams.init(
            rng, D, cfg.fusion_heads, cfg.mf_depth, cfg.mf_kernel, cfg.activation, cfg.attn_bias
        ),
        fusion=ExpertFusionParams.init(
            rng, D, cfg.refine_heads, cfg.experts, cfg.activation, cfg.attn_bias
        ),
        concat_head=LinearParams.init(rng, 2 * D, D),
        classifier=LinearParams.init(rng, D, cfg.num_classes),
    )


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted.name, tensor)`` for every tensor in a parameter tree."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")


def parameter_dict(params: ModelParams) -> dict[str, Tensor]:
    return dict(named_parameters(params))


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for _, t in named_parameters(params))


def save_params(params: ModelParams, path) -> None:
    arrays = {name: t.data for name, t in named_parameters(params)}
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_params(cfg: ModelConfig, path) -> ModelParams:
    params = init_params(cfg)
    with np.load(Path(path)) as stored:
        expected = parameter_dict(params)
        missing = set(expected) - set(stored.files)
        extra = set(stored.files) - set(expected)
        if missing or extra:
            raise ConfigError(
                f"parameter file does not match config: missing {sorted(missing)[:5]}, "
                f"unexpected {sorted(extra)[:5]}"
            )
        for name, t in expected.items():
            arr = stored[name]
            if arr.shape != t.shape:
                raise ConfigError(f"parameter {name} has shape {arr.shape}, expected {t.shape}")
            t.data = np.array(arr, dtype=T.DTYPE)
    return params


def snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in named_parameters(params)}


def restore(params: ModelParams, state: dict[str, np.ndarray]) -> None:
    for name, t in named_parameters(params):
        t.data = state[name].copy()


class ForwardResult(NamedTuple):
    logits: Tensor
    fusion: Optional[FusionTrace]
    gated: GatedFeatures
    dual: DualPathOutput


def _pool(x: Tensor) -> Tensor:
    B, L, D = x.shape
    return T.reshape(x, (B, D)) if L == 1 else T.mean(x, axis=1)


def forward_full(
    params: ModelParams,
    cfg: ModelConfig,
    text_feat,
    img_feat,
    *,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardResult:
    """project -> coattend -> dual_path -> expert_fuse -> classify.

    ``train=True`` enables dropout and needs ``rng``. Sequences longer than
    one token are mean-pooled before fusion.
    """
    flags = cfg.ablations
    text_feat = np.asarray(text_feat, dtype=T.DTYPE)
    img_feat = np.asarray(img_feat, dtype=T.DTYPE)
    if text_feat.shape[-1] != cfg.D_text or img_feat.shape[-1] != cfg.D_img:
        raise ShapeError(
            f"batch feature dims ({text_feat.shape[-1]}, {img_feat.shape[-1]}) do not match "
            f"config ({cfg.D_text}, {cfg.D_img})"
        )
    for arr in (text_feat, img_feat):
        L = 1 if arr.ndim == 2 else arr.shape[1]
        if arr.ndim not in (2, 3) or L != cfg.L:
            raise ShapeError(f"batch feature shape {arr.shape} does not match config L={cfg.L}")
    if flags.image_only:
        text_feat = np.zeros_like(text_feat)
    if flags.text_only:
        img_feat = np.zeros_like(img_feat)
    drop = DropoutConfig(cfg.dropout, "train" if train else "eval")

    T_seq, I_seq = project(params.projection, Tensor(text_feat), Tensor(img_feat))
    gated = coattend(params.coattn, T_seq, I_seq, flags)
    dual = dual_path(params.dualpath, T_seq, I_seq, gated, drop, rng, flags)
    z_text, z_img = _pool(dual.Z_text_final), _pool(dual.Z_img_final)
    if flags.no_EF:
        E_out, trace = concat_fuse(params.concat_head, z_text, z_img), None
    else:
        E_out, trace = expert_fuse(params.fusion, z_text, z_img, drop, rng)
    logits = classify(params.classifier, E_out)
    return ForwardResult(logits, trace, gated, dual)
