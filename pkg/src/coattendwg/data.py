"""Feature datasets: file format, splitting and synthetic cross-modal tasks.

File layout (tab separated, floats with 17 significant digits)::

    D_text=<int> D_img=<int> C=<int>
    <id>\t<label>\t<t0,t1,...>\t<i0,i1,...>
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DatasetFormatError(ValueError):
    """A dataset file or record violates the expected format."""


@dataclass
class FeatureRecord:
    id: str
    text_feat: np.ndarray
    img_feat: np.ndarray
    label: int


@dataclass
class Dataset:
    D_text: int
    D_img: int
    num_classes: int
    records: list[FeatureRecord] = field(default_factory=list)

    def __post_init__(self):
        for r in self.records:
            self._check(r)

    def _check(self, r: FeatureRecord) -> None:
        if len(r.text_feat) != self.D_text:
            raise DatasetFormatError(
                f"record {r.id!r}: text vector has length {len(r.text_feat)}, expected {self.D_text}"
            )
        if len(r.img_feat) != self.D_img:
            raise DatasetFormatError(
                f"record {r.id!r}: image vector has length {len(r.img_feat)}, expected {self.D_img}"
            )
        if not 0 <= r.label < self.num_classes:
            raise DatasetFormatError(
                f"record {r.id!r}: label {r.label} outside [0, {self.num_classes})"
            )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.D_text, self.D_img, self.num_classes, [self.records[i] for i in indices])

    def with_records(self, records: list[FeatureRecord]) -> "Dataset":
        return Dataset(self.D_text, self.D_img, self.num_classes, records)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(text [N, D_text], image [N, D_img], labels [N])``."""
        n = len(self.records)
        text = np.empty((n, self.D_text))
        img = np.empty((n, self.D_img))
        labels = np.empty(n, dtype=np.int64)
        for k, r in enumerate(self.records):
            text[k], img[k], labels[k] = r.text_feat, r.img_feat, r.label
        return text, img, labels

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def class_counts(self) -> np.ndarray:
        return np.bincount([r.label for r in self.records], minlength=self.num_classes)


_HEADER = re.compile(r"^D_text=(\d+)\s+D_img=(\d+)\s+C=(\d+)\s*$")


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def save_features(dataset: Dataset, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(f"D_text={dataset.D_text} D_img={dataset.D_img} C={dataset.num_classes}\n")
        for r in dataset.records:
            if "\t" in r.id or "\n" in r.id:
                raise DatasetFormatError(f"record id {r.id!r} contains a tab or newline")
            text = ",".join(format_float(v) for v in r.text_feat)
            img = ",".join(format_float(v) for v in r.img_feat)
            fh.write(f"{r.id}\t{r.label}\t{text}\t{img}\n")


def _parse_vector(raw: str, lineno: int, what: str) -> np.ndarray:
    if not raw:
        return np.empty(0)
    try:
        return np.array([float(v) for v in raw.split(",")])
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: bad {what} vector ({exc})") from None


def load_features(path) -> Dataset:
    """Parse a dataset file, validating the header, vector lengths and labels."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file, expected a header line")
    m = _HEADER.match(lines[0])
    if m is None:
        raise DatasetFormatError(
            f"line 1: malformed header {lines[0]!r}, expected 'D_text=<int> D_img=<int> C=<int>'"
        )
    d_text, d_img, n_cls = (int(v) for v in m.groups())
    ds = Dataset(d_text, d_img, n_cls)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DatasetFormatError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        rid, raw_label, raw_text, raw_img = parts
        try:
            label = int(raw_label)
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: label {raw_label!r} is not an integer") from None
        rec = FeatureRecord(
            rid,
            _parse_vector(raw_text, lineno, "text"),
            _parse_vector(raw_img, lineno, "image"),
            label,
        )
        ds._check(rec)
        ds.records.append(rec)
    return ds


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``floor(ratio * N)`` records train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratio * n + 1e-9)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


TASKS = ("xor-interaction", "single-modality", "linearly-separable")


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 1000
    D_text: int = 16
    D_img: int = 16
    task: str = "xor-interaction"
    noise: float = 0.1
    seed: int = 0
    modality: str = "text"  # single-modality task only

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown synthetic task {self.task!r}; expected one of {TASKS}")
        if self.modality not in ("text", "image"):
            raise ValueError(f"modality must be 'text' or 'image', got {self.modality!r}")
        if self.n_samples < 0 or self.D_text <= 0 or self.D_img <= 0 or self.noise < 0:
            raise ValueError("synthetic spec needs n_samples >= 0, positive dims and noise >= 0")


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def synth_generate(spec: SyntheticSpec) -> Dataset:
    """Binary datasets whose label depends on latent bits carried by each modality.

    Each modality encodes one latent bit ``b`` as ``(2b - 1)`` times a fixed
    random unit direction plus isotropic Gaussian noise. For
    ``xor-interaction`` the label is the XOR of the text and image bits, so
    neither modality alone carries information about it.
    """
    rng = np.random.default_rng(spec.seed)
    d_text, d_img = _unit(rng, spec.D_text), _unit(rng, spec.D_img)
    n = spec.n_samples
    u = rng.integers(0, 2, size=n)
    v = rng.integers(0, 2, size=n)
    if spec.task == "xor-interaction":
        labels = u ^ v
    elif spec.task == "single-modality":
        labels = u if spec.modality == "text" else v
    else:
        v = u
        labels = u
    text = (2 * u - 1)[:, None] * d_text + spec.noise * rng.standard_normal((n, spec.D_text))
    img = (2 * v - 1)[:, None] * d_img + spec.noise * rng.standard_normal((n, spec.D_img))
    width = len(str(max(n - 1, 0)))
    records = [
        FeatureRecord(f"s{k:0{width}d}", text[k].copy(), img[k].copy(), int(labels[k]))
        for k in range(n)
    ]
    return Dataset(spec.D_text, spec.D_img, 2, records)


def from_arrays(
    text: np.ndarray,
    img: np.ndarray,
    labels: Sequence[int],
    num_classes: int,
    ids: Optional[Sequence[str]] = None,
) -> Dataset:
    ids = ids if ids is not None else [f"r{k}" for k in range(len(labels))]
    records = [
        FeatureRecord(str(i), np.asarray(t, float), np.asarray(m, float), int(y))
        for i, t, m, y in zip(ids, text, img, labels)
    ]
    return Dataset(text.shape[1], img.shape[1], num_classes, records)
