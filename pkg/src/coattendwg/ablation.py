"""Ablation switches and the variant matrix used for comparison runs.

Flag meanings:

* ``no_CA``: co-attention outputs are replaced by the projections themselves.
* ``no_FF``: dimension-wise gates are skipped; attention outputs pass ungated.
* ``no_MF``: MambaFormer encoders become the identity.
* ``no_XA``: the second cross-attention terms are zero.
* ``no_EF``: expert fusion is replaced by concat + linear map back to ``D``.
* ``two_heads``: the fusion-refinement attention uses 2 heads.
* ``text_only`` / ``image_only``: the other modality's input features are zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Iterable


@dataclass(frozen=True)
class AblationFlags:
    no_EF: bool = False
    no_CA: bool = False
    no_XA: bool = False
    no_MF: bool = False
    no_FF: bool = False
    two_heads: bool = False
    text_only: bool = False
    image_only: bool = False

    def __post_init__(self):
        if self.text_only and self.image_only:
            raise ValueError("text_only and image_only are mutually exclusive")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "AblationFlags":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for raw in names:
            name = raw.strip()
            if not name:
                continue
            if name not in known:
                raise ValueError(f"unknown ablation flag {name!r}; expected one of {sorted(known)}")
            kwargs[name] = True
        return cls(**kwargs)

    def names(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]

    @property
    def any(self) -> bool:
        return bool(self.names())

    def __str__(self) -> str:
        return ",".join(self.names())


ABLATION_VARIANTS: dict[str, AblationFlags] = {
    "w/o EF": AblationFlags(no_EF=True),
    "w/o CA": AblationFlags(no_CA=True),
    "w/o XA": AblationFlags(no_XA=True),
    "w/o MF": AblationFlags(no_MF=True),
    "w/o FF": AblationFlags(no_FF=True),
    "w/o EF+MF": AblationFlags(no_EF=True, no_MF=True),
    "w/o CA+XA": AblationFlags(no_CA=True, no_XA=True),
    "w/o EF+CA+MF": AblationFlags(no_EF=True, no_CA=True, no_MF=True),
    "2Heads": AblationFlags(two_heads=True),
    "w/o MF+FF": AblationFlags(no_MF=True, no_FF=True),
    "Full": AblationFlags(),
}

SINGLE_ABLATIONS = ("w/o EF", "w/o CA", "w/o XA", "w/o MF", "w/o FF", "2Heads")

SINGLE_MODALITY_VARIANTS: dict[str, AblationFlags] = {
    "Text only": AblationFlags(text_only=True),
    "Image only": AblationFlags(image_only=True),
}

REDUCED_REFINE_HEADS = 2


def ablate_variant(cfg, flags: AblationFlags):
    """Return a copy of a model config with ``flags`` applied.

    ``two_heads`` is resolved here because it changes a head count; the other
    flags are read by the forward pass.
    """
    refine = REDUCED_REFINE_HEADS if flags.two_heads else cfg.refine_heads
    return replace(cfg, ablations=flags, refine_heads=refine)
