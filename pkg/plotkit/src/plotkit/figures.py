"""Paper-style figure panels from harness outputs.

Two products:
  * the training figure: class distribution, overall and per-group
    loss/accuracy curves vs privacy cost, one curve per optimizer;
  * the cosine heatmap: class-sorted pairwise gradient similarities with
    class-boundary ticks on a fixed [-0.2, 1.0] color scale.

Rendering is read-only over its inputs and deterministic (SVG output
drops the date stamp), so re-rendering is idempotent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotkit"  # deterministic SVG ids
import matplotlib.pyplot as plt
import numpy as np

from .metrics_io import (
    MetricsTable,
    SchemaError,
    class_counts_from_spec,
    load_diagnostics_record,
    load_metrics,
    sibling_summary,
)


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple
    out_dir: Path
    labels: tuple | None = None
    image_format: str = "svg"
    layout: str = "paper"  # "paper" = 12-panel Fig-2 selection, "full" = every group
    name: str = "training_figure"

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("at least one metrics file is required")
        if self.labels is not None and len(self.labels) != len(self.inputs):
            raise ValueError("labels must pair up with inputs")
        if self.layout not in ("paper", "full"):
            raise ValueError(f"unknown layout {self.layout!r}")


@dataclass(frozen=True)
class RenderResult:
    path: Path
    panel_count: int
    panel_titles: tuple
    legend_labels: tuple


def spread_ids(num_groups: int, k: int) -> list[int]:
    """k distinct group ids spread evenly across [0, num_groups)."""
    if k >= num_groups:
        return list(range(num_groups))
    ids = {int(math.floor(i * (num_groups - 1) / (k - 1) + 0.5)) for i in range(k)}
    j = 0
    while len(ids) < k:  # collisions only for tiny G
        ids.add(j)
        j += 1
    return sorted(ids)


def _load_tables(spec: FigureSpec) -> list[MetricsTable]:
    labels = spec.labels or [None] * len(spec.inputs)
    tables = [load_metrics(p, label) for p, label in zip(spec.inputs, labels)]
    G = tables[0].num_groups
    for t in tables[1:]:
        if t.num_groups != G:
            raise SchemaError(
                f"inconsistent group counts: {tables[0].path} has {G}, "
                f"{t.path} has {t.num_groups}"
            )
    return tables


def _distribution_counts(spec: FigureSpec) -> np.ndarray | None:
    for p in spec.inputs:
        summary = sibling_summary(p)
        if summary:
            ds = summary.get("config", {}).get("dataset_spec")
            if ds:
                return class_counts_from_spec(ds)
    return None


def render_training_figure(spec: FigureSpec) -> RenderResult:
    tables = _load_tables(spec)
    G = tables[0].num_groups
    if spec.layout == "paper":
        loss_ids = spread_ids(G, 4)
        acc_ids = spread_ids(G, 5)
    else:
        loss_ids = list(range(G))
        acc_ids = list(range(G))

    panels: list[tuple[str, str, int | None]] = [("distribution", "", None),
                                                 ("loss", "overall", None)]
    panels += [("loss", f"group {g}", g) for g in loss_ids]
    panels += [("acc", "overall", None)]
    panels += [("acc", f"group {g}", g) for g in acc_ids]

    ncols = 4
    nrows = math.ceil(len(panels) / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.2 * ncols, 3.2 * nrows))
    axes = np.atleast_1d(axes).ravel()
    titles = []

    counts = _distribution_counts(spec)
    for ax, (kind, which, g) in zip(axes, panels):
        if kind == "distribution":
            title = "class distribution"
            if counts is not None:
                ax.bar(np.arange(len(counts)), counts, width=1.0, color="steelblue")
                ax.set_yscale("log")
                ax.set_xlabel("class")
                ax.set_ylabel("samples")
            else:
                ax.text(0.5, 0.5, "class distribution unavailable\n(no summary.json)",
                        ha="center", va="center", transform=ax.transAxes)
        else:
            for t in tables:
                y = (t.loss_overall if kind == "loss" else t.acc_overall) if g is None \
                    else (t.loss_groups[:, g] if kind == "loss" else t.acc_groups[:, g])
                ax.plot(t.epsilon, y, label=t.label, linewidth=1.2)
            ax.set_xlabel("epsilon")
            if kind == "loss":
                ax.set_yscale("log")
                ax.set_ylabel("training loss")
            else:
                ax.set_ylabel("training accuracy")
                ax.set_ylim(-0.02, 1.02)
            title = f"{'loss' if kind == 'loss' else 'accuracy'} ({which})"
        ax.set_title(title, fontsize=10)
        titles.append(title)

    for ax in axes[len(panels):]:
        ax.axis("off")
    handles, labels = axes[1].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower right", ncol=min(4, len(labels)))
    fig.tight_layout(rect=(0, 0.03, 1, 1))

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    out = spec.out_dir / f"{spec.name}.{spec.image_format}"
    _save(fig, out)
    plt.close(fig)
    return RenderResult(path=out, panel_count=len(panels),
                        panel_titles=tuple(titles), legend_labels=tuple(labels))


def render_cosine_heatmap(report_path, out_dir, step: int | None = None,
                          image_format: str = "svg",
                          name: str = "cosine_heatmap") -> RenderResult:
    record = load_diagnostics_record(report_path, step)
    cos = record.get("cosine", {})
    matrix_name = cos.get("matrix_path")
    if not matrix_name:
        raise SchemaError("diagnostics record carries no cosine matrix path")
    matrix_path = Path(report_path).parent / matrix_name
    if not matrix_path.exists():
        raise FileNotFoundError(f"cosine matrix file {matrix_path} is missing")
    M = np.load(matrix_path)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"cosine matrix must be square, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-8):
        raise ValueError("cosine matrix is not symmetric")

    classes = np.asarray(cos.get("classes", []))
    boundaries = (np.flatnonzero(np.diff(classes)) + 0.5 if classes.size else
                  np.array([]))

    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(M, vmin=-0.2, vmax=1.0, cmap="viridis", interpolation="nearest")
    ax.set_xticks(boundaries, minor=True)
    ax.set_yticks(boundaries, minor=True)
    ax.tick_params(which="minor", length=3, color="white")
    ax.set_title(f"pairwise gradient cosine similarity (step {record.get('step', '?')})")
    ax.set_xlabel("samples (class-sorted)")
    ax.set_ylabel("samples (class-sorted)")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"{name}.{image_format}"
    _save(fig, out)
    plt.close(fig)
    return RenderResult(path=out, panel_count=1,
                        panel_titles=(str(record.get("step")),), legend_labels=())


def _save(fig, out: Path) -> None:
    if out.suffix == ".svg":
        fig.savefig(out, metadata={"Date": None})  # byte-stable re-render
    else:
        fig.savefig(out, dpi=150)
