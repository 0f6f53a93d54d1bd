"""Attention-map and segmentation-timeline exports.

Attention maps go out as full-precision CSVs (one per layer and head plus
the head-averaged final layer) so downstream analysis keeps exact values;
the optional SVG renders a block-averaged view of the final-layer mean
with ground-truth segment boundaries drawn in red.

The timeline SVG stacks two tracks, truth above prediction, each showing
the wrist trace colored by label run.  Padded frames are excluded from
both tracks.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from .dataset import IGNORE_INDEX, LabelScheme, Sequence, label_runs
from .errors import CapabilityError
from .models import AttentionTrace, Model

# per-class colors, indexed IP, T, MTR, PR
LABEL_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def _write_matrix_csv(matrix: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return np.asarray([[float(v) for v in row] for row in csv.reader(fh)])


def export_attention(model: Model, sequence: Sequence, out_dir,
                     write_svg: bool = True) -> list[Path]:
    """Run one forward pass and dump every head's attention matrix.

    Returns the written paths: per-layer/per-head CSVs, the final-layer
    head mean CSV, and optionally an SVG heatmap of that mean.
    """
    if not model.config.uses_attention:
        raise CapabilityError(f"{model.config.name} has no attention to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, trace = model.forward(sequence.values, record_attention=True)
    written: list[Path] = []
    for layer, heads in enumerate(trace.weights):
        for head in range(heads.shape[0]):
            path = out_dir / f"attn_layer{layer:02d}_head{head}.csv"
            _write_matrix_csv(heads[head], path)
            written.append(path)
    mean = trace.head_mean(-1)
    mean_path = out_dir / "attn_final_layer_mean.csv"
    _write_matrix_csv(mean, mean_path)
    written.append(mean_path)
    if write_svg:
        svg_path = out_dir / "attn_final_layer_mean.svg"
        boundaries = _segment_boundaries(sequence.labels)
        svg_path.write_text(attention_svg(mean, boundaries), encoding="utf-8")
        written.append(svg_path)
    return written


def _segment_boundaries(labels: np.ndarray) -> list[int]:
    """Frame indices where the (non-padded) label changes."""
    valid = labels[labels != IGNORE_INDEX]
    return [start for _, start, _ in label_runs(valid)[1:]]


def _block_mean(matrix: np.ndarray, max_cells: int) -> np.ndarray:
    n = matrix.shape[0]
    if n <= max_cells:
        return matrix
    # trim the remainder so the grid divides evenly; drawing only
    block = int(np.ceil(n / max_cells))
    m = (n // block) * block
    trimmed = matrix[:m, :m]
    return trimmed.reshape(m // block, block, m // block, block).mean(axis=(1, 3))


def attention_svg(matrix: np.ndarray, boundaries: Seq[int] = (),
                  cell_px: float = 3.0, max_cells: int = 120) -> str:
    """Grayscale heatmap of an attention matrix with red boundary lines."""
    full_n = matrix.shape[0]
    grid = _block_mean(np.asarray(matrix, dtype=np.float64), max_cells)
    n = grid.shape[0]
    scale = n / full_n
    size = n * cell_px
    peak = grid.max() or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.2f} {size:.2f}">',
        f'<rect width="{size:.2f}" height="{size:.2f}" fill="#000000"/>',
    ]
    for i in range(n):
        for j in range(n):
            v = grid[i, j] / peak
            if v < 1e-3:
                continue
            lum = int(round(255 * min(1.0, v)))
            parts.append(
                f'<rect x="{j * cell_px:.2f}" y="{i * cell_px:.2f}" '
                f'width="{cell_px:.2f}" height="{cell_px:.2f}" '
                f'fill="#{lum:02x}{lum:02x}{lum:02x}"/>'
            )
    for b in boundaries:
        pos = b * scale * cell_px
        parts.append(
            f'<line x1="{pos:.2f}" y1="0" x2="{pos:.2f}" y2="{size:.2f}" '
            f'stroke="#ff0000" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="0" y1="{pos:.2f}" x2="{size:.2f}" y2="{pos:.2f}" '
            f'stroke="#ff0000" stroke-width="1"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# segmentation timeline
# ---------------------------------------------------------------------------


def timeline_svg(sequence: Sequence, predictions: np.ndarray,
                 scheme: LabelScheme | None = None) -> str:
    """Two stacked tracks (truth, prediction) of the wrist trace by label."""
    scheme = scheme or LabelScheme.for_view(sequence.view)
    valid = sequence.labels != IGNORE_INDEX
    truth = sequence.labels[valid]
    preds = np.asarray(predictions, dtype=np.int64)[: truth.size]
    wrist = sequence.values[valid, 0]

    n = truth.size
    track_h, gap, margin = 90.0, 24.0, 30.0
    px = max(1.0, 900.0 / max(n, 1))
    width = margin * 2 + n * px
    height = margin * 2 + track_h * 2 + gap

    lo, hi = float(wrist.min()), float(wrist.max())
    span = (hi - lo) or 1.0

    def trace_points(y_top: float) -> str:
        pts = []
        for t in range(n):
            x = margin + (t + 0.5) * px
            y = y_top + (wrist[t] - lo) / span * (track_h - 10.0) + 5.0
            pts.append(f"{x:.2f},{y:.2f}")
        return " ".join(pts)

    def track(labels: np.ndarray, y_top: float, title: str) -> list[str]:
        parts = [f'<g id="{title}">']
        for label, start, length in label_runs(labels):
            color = LABEL_COLORS[label % len(LABEL_COLORS)]
            parts.append(
                f'<rect x="{margin + start * px:.2f}" y="{y_top:.2f}" '
                f'width="{length * px:.2f}" height="{track_h:.2f}" '
                f'fill="{color}" fill-opacity="0.45" '
                f'data-label="{scheme.name_of(label)}" data-run="{start}:{length}"/>'
            )
        parts.append(
            f'<polyline points="{trace_points(y_top)}" fill="none" '
            f'stroke="#222222" stroke-width="1.2"/>'
        )
        parts.append("</g>")
        return parts

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.2f} {height:.2f}">',
        f'<rect width="{width:.2f}" height="{height:.2f}" fill="#ffffff"/>',
    ]
    parts += track(truth, margin, "truth")
    parts += track(preds, margin + track_h + gap, "prediction")
    parts.append("</svg>")
    return "\n".join(parts)


def export_timeline(sequence: Sequence, predictions: np.ndarray, path,
                    scheme: LabelScheme | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(timeline_svg(sequence, predictions, scheme), encoding="utf-8")
    return path
