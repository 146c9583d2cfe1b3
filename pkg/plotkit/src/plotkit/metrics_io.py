"""Readers for the dpoptlab harness file formats.

plotkit talks to the trainer only through its published outputs: the
metrics CSV (step, epsilon, loss_overall, acc_overall, loss_g*, acc_g*,
clipped_frac, wall_ms), the per-run summary.json sitting next to it, and
diagnostics.jsonl records that point at cosine .npy matrices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """Input file does not match the published metrics schema."""


@dataclass(frozen=True)
class MetricsTable:
    path: Path
    label: str
    step: np.ndarray
    epsilon: np.ndarray
    loss_overall: np.ndarray
    acc_overall: np.ndarray
    loss_groups: np.ndarray  # (rows, G)
    acc_groups: np.ndarray   # (rows, G)

    @property
    def num_groups(self) -> int:
        return self.loss_groups.shape[1]


def _group_columns(header: list[str], prefix: str) -> list[str]:
    cols = [h for h in header if h.startswith(prefix)]
    expected = [f"{prefix}{g}" for g in range(len(cols))]
    if cols != expected:
        raise SchemaError(f"{prefix}* columns must be contiguous from 0, got {cols}")
    return cols


def load_metrics(path, label: str | None = None) -> MetricsTable:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = {"step", "epsilon", "loss_overall", "acc_overall", "clipped_frac"}
        missing = required - set(header)
        if missing:
            raise SchemaError(f"{path} is missing columns {sorted(missing)}")
        loss_cols = _group_columns(header, "loss_g")
        acc_cols = _group_columns(header, "acc_g")
        if len(loss_cols) != len(acc_cols) or not loss_cols:
            raise SchemaError(f"{path} has {len(loss_cols)} loss groups "
                              f"but {len(acc_cols)} accuracy groups")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path} contains no metric rows")

    def col(name):
        return np.array([float(r[name]) for r in rows])

    return MetricsTable(
        path=path,
        label=label or _default_label(path),
        step=col("step"),
        epsilon=col("epsilon"),
        loss_overall=col("loss_overall"),
        acc_overall=col("acc_overall"),
        loss_groups=np.column_stack([col(c) for c in loss_cols]),
        acc_groups=np.column_stack([col(c) for c in acc_cols]),
    )


def sibling_summary(metrics_path) -> dict | None:
    candidate = Path(metrics_path).parent / "summary.json"
    if not candidate.exists():
        return None
    with open(candidate, encoding="utf-8") as fh:
        return json.load(fh)


def _default_label(path: Path) -> str:
    summary = sibling_summary(path)
    if summary:
        try:
            return summary["config"]["optimizer"]["kind"]
        except (KeyError, TypeError):
            pass
    return path.parent.name or path.stem


def class_counts_from_spec(spec: dict) -> np.ndarray:
    """Per-class sample counts of the dyadic generator described by a
    dataset_spec block (num_groups, scale_exponent, min_class_size)."""
    G = spec["num_groups"]
    S = spec["scale_exponent"]
    m = spec.get("min_class_size", 5)
    counts = []
    for g in range(G):
        counts.extend([max(2 ** (S - g), m)] * (2**g))
    return np.asarray(counts)


def load_diagnostics_record(report_path, step: int | None = None) -> dict:
    """One record from a diagnostics.jsonl stream (or a single-record
    .json file); picks the given step or the first record."""
    report_path = Path(report_path)
    records = []
    with open(report_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise SchemaError(f"{report_path} contains no diagnostics records")
    if step is None:
        return records[0]
    for rec in records:
        if rec.get("step") == step:
            return rec
    raise SchemaError(f"{report_path} has no record for step {step}")
