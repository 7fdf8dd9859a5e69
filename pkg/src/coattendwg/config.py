"""Flat ``key=value`` config files covering model and training settings.

Blank lines and ``#`` comments are ignored. ``seed`` sets both the
initialization and training seeds; ``ablations`` takes a comma-separated
list of flag names. Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .ablation import AblationFlags, ablate_variant
from .model import ConfigError, ModelConfig
from .training import TrainConfig

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"seed", "ablations"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explicit: frozenset = frozenset()


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    model_kw: dict = {}
    train_kw: dict = {}
    model_defaults, train_defaults = ModelConfig(), TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            model_kw["seed"] = train_kw["seed"] = _coerce(key, raw, 0)
        elif key == "ablations":
            try:
                model_kw["ablations"] = AblationFlags.from_names(raw.split(","))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        elif key in _MODEL_KEYS:
            model_kw[key] = _coerce(key, raw, getattr(model_defaults, key))
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(key, raw, getattr(train_defaults, key))
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    flags = model_kw.pop("ablations", AblationFlags())
    try:
        model = ablate_variant(ModelConfig(**model_kw), flags)
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    explicit = frozenset(model_kw) | frozenset(train_kw)
    return RunConfig(model, train, explicit)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(run: RunConfig) -> str:
    lines = []
    for f in fields(run.model):
        if f.name in ("seed", "ablations"):
            continue
        lines.append(f"{f.name}={_fmt(getattr(run.model, f.name))}")
    lines.append(f"ablations={run.model.ablations}")
    lines.append(f"seed={run.model.seed}")
    for f in fields(run.train):
        if f.name != "seed":
            lines.append(f"{f.name}={_fmt(getattr(run.train, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def bind_dataset_dims(run: RunConfig, d_text: int, d_img: int, num_classes: int) -> ModelConfig:
    """Fill input dims and class count from a dataset header.

    Values set explicitly in the config file must agree with the header.
    """
    want = {"D_text": d_text, "D_img": d_img, "num_classes": num_classes}
    for key, value in want.items():
        if key in run.explicit and getattr(run.model, key) != value:
            raise ConfigError(
                f"config sets {key}={getattr(run.model, key)} but the dataset has {value}"
            )
    return replace(run.model, **want)
