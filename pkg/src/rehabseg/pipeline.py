"""Glue from raw labeled sequences to standardized training sets.

One item = (id, patient_id, raw values with NaN, per-frame labels in the
top-view scheme).  Refinement runs first on the full sequence; accepted
side-view sequences are truncated after the last MTR frame; everything is
then standardized to 300 frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import (
    LabelScheme,
    Sequence,
    read_labels_csv,
    standardize_length,
    truncate_after_mtr,
)
from .ingest import RawSequence, View, read_sequence_csv
from .refine import RefineConfig, refine_sequence
from .synth import SynthSequence


@dataclass
class RejectionRow:
    sequence_id: str
    hand_fraction: float
    object_fraction: float
    accepted: bool

    def as_tuple(self):
        return (self.sequence_id, self.hand_fraction, self.object_fraction, self.accepted)


def prepare_sequence(
    seq_id: str,
    patient_id: str,
    raw: RawSequence,
    labels: np.ndarray,
    config: RefineConfig,
) -> tuple[Sequence | None, RejectionRow]:
    """Refine one sequence into a training example, or report its rejection."""
    result = refine_sequence(raw, config)
    row = RejectionRow(seq_id, result.hand_fraction, result.object_fraction, result.accepted)
    if not result.accepted:
        return None, row
    values = result.sequence.values
    if raw.view is not View.TOP:
        values, labels = truncate_after_mtr(values, labels)
    values, labels, original = standardize_length(values, labels)
    seq = Sequence(
        id=seq_id,
        patient_id=patient_id,
        view=raw.view,
        values=values,
        labels=labels,
        original_length=original,
    )
    return seq, row


def prepare_dataset(
    items: Iterable[SynthSequence], config: RefineConfig
) -> tuple[list[Sequence], list[RejectionRow]]:
    accepted: list[Sequence] = []
    rows: list[RejectionRow] = []
    for item in items:
        seq, row = prepare_sequence(item.id, item.patient_id, item.raw, item.labels, config)
        rows.append(row)
        if seq is not None:
            accepted.append(seq)
    return accepted, rows


def labels_path_for(sequence_path) -> Path:
    """Labels CSV sits next to the sequence CSV as ``<stem>_labels.csv``."""
    p = Path(sequence_path)
    return p.with_name(p.stem + "_labels.csv")


def load_manifest_dataset(
    manifest_rows: list[dict], config: RefineConfig, base_dir=None
) -> tuple[list[Sequence], list[RejectionRow]]:
    """Build a training set from a manifest of raw sequence CSVs."""
    accepted: list[Sequence] = []
    rejections: list[RejectionRow] = []
    top_scheme = LabelScheme.for_view(View.TOP)  # raw labels use the full scheme
    for row in manifest_rows:
        path = Path(row["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        raw = read_sequence_csv(path, view=row["view"])
        labels = read_labels_csv(labels_path_for(path), top_scheme)
        seq, rej = prepare_sequence(row["id"], row["patient_id"], raw, labels, config)
        rejections.append(rej)
        if seq is not None:
            accepted.append(seq)
    return accepted, rejections
