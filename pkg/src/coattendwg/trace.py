"""Per-sample interpretability traces in long (tidy) format.

Every row is ``(id, kind, indices, value)``. Attention kinds index
``head:row:col``, channel gates index ``pos:dim``, expert gates index the
expert, and ``prediction`` / ``label`` rows carry no index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, format_float
from .model import ForwardResult, ModelConfig, ModelParams, forward_full

ATTENTION_KINDS = ("attn_t2i", "attn_i2t", "xattn_t", "xattn_i", "refine_attn")
GATE_KINDS = ("gate_t", "gate_i")
COLUMNS = ("id", "kind", "indices", "value")


@dataclass(frozen=True)
class TraceRow:
    id: str
    kind: str
    indices: tuple
    value: float


def _rows_for_array(ids: Sequence[str], kind: str, arr: Optional[np.ndarray]) -> Iterable[TraceRow]:
    if arr is None:
        return
    for b, sample_id in enumerate(ids):
        sample = arr[b]
        for idx in np.ndindex(sample.shape):
            yield TraceRow(sample_id, kind, tuple(int(i) for i in idx), float(sample[idx]))


def trace_rows(
    result: ForwardResult, ids: Sequence[str], labels: Optional[Sequence[int]] = None
) -> list[TraceRow]:
    """Flatten one forward pass into trace rows, ordered by sample then kind."""
    g, d = result.gated, result.dual
    sources = {
        "attn_t2i": g.attn_t2i_w,
        "attn_i2t": g.attn_i2t_w,
        "xattn_t": d.xattn_t_w,
        "xattn_i": d.xattn_i_w,
        "refine_attn": None if result.fusion is None else result.fusion.refine_attn,
        "gate_t": g.G_t,
        "gate_i": g.G_i,
        "expert_gate": None if result.fusion is None else result.fusion.g,
    }
    arrays = {k: (None if v is None else v.data) for k, v in sources.items()}
    preds = np.argmax(result.logits.data, axis=-1)
    rows: list[TraceRow] = []
    for b, sample_id in enumerate(ids):
        for kind, arr in arrays.items():
            rows.extend(_rows_for_array([sample_id], kind, None if arr is None else arr[b : b + 1]))
        rows.append(TraceRow(sample_id, "prediction", (), float(preds[b])))
        if labels is not None:
            rows.append(TraceRow(sample_id, "label", (), float(labels[b])))
    return rows


def collect_traces(
    params: ModelParams, cfg: ModelConfig, dataset: Dataset, batch_size: int = 256
) -> list[TraceRow]:
    """Eval-mode traces for every record, sorted by record id."""
    order = sorted(range(len(dataset)), key=lambda k: dataset.records[k].id)
    ds = dataset.subset(order)
    text, img, labels = ds.arrays()
    ids = ds.ids()
    rows: list[TraceRow] = []
    for s in range(0, len(ds), batch_size):
        result = forward_full(params, cfg, text[s : s + batch_size], img[s : s + batch_size])
        rows.extend(trace_rows(result, ids[s : s + batch_size], labels[s : s + batch_size]))
    return rows


def _fmt_indices(idx: tuple) -> str:
    return ":".join(str(i) for i in idx)


def _parse_indices(raw: str) -> tuple:
    return tuple(int(v) for v in raw.split(":")) if raw else ()


def export_trace(rows: Sequence[TraceRow], path, fmt: str = "csv") -> None:
    if not rows:
        raise ValueError("no trace rows to export")
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"trace format must be csv or jsonl, got {fmt!r}")
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for r in rows:
                writer.writerow((r.id, r.kind, _fmt_indices(r.indices), format_float(r.value)))
        else:
            for r in rows:
                fh.write(
                    f'{{"id": {json.dumps(r.id)}, "kind": {json.dumps(r.kind)}, '
                    f'"indices": {json.dumps(list(r.indices))}, "value": {format_float(r.value)}}}\n'
                )


def load_trace(path, fmt: Optional[str] = None) -> list[TraceRow]:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix == ".jsonl" else "csv")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise ValueError(f"unexpected trace header {header}")
            for rid, kind, idx, value in reader:
                rows.append(TraceRow(rid, kind, _parse_indices(idx), float(value)))
        else:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    rows.append(TraceRow(obj["id"], obj["kind"], tuple(obj["indices"]), float(obj["value"])))
    return rows
