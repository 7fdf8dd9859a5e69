"""Co-attentive dimension-wise gating with expert fusion for two-modality classification."""

from .ablation import AblationFlags, ABLATION_VARIANTS, ablate_variant
from .data import Dataset, FeatureRecord, SyntheticSpec, load_features, save_features, split, synth_generate
from .gradcheck import GradcheckReport, gradcheck
from .model import ModelConfig, ModelParams, forward_full, init_params
from .tensor import Tape, Tensor, backward
from .training import TrainConfig, evaluate, train

__all__ = [
    "AblationFlags",
    "ABLATION_VARIANTS",
    "ablate_variant",
    "Dataset",
    "FeatureRecord",
    "SyntheticSpec",
    "load_features",
    "save_features",
    "split",
    "synth_generate",
    "GradcheckReport",
    "gradcheck",
    "ModelConfig",
    "ModelParams",
    "forward_full",
    "init_params",
    "Tape",
    "Tensor",
    "backward",
    "TrainConfig",
    "evaluate",
    "train",
]
