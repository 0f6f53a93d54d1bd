"""Length standardization, label handling, and patient-grouped splits.

Sequences enter as refined [T, C] matrices with one integer label per
frame and leave as fixed-length 300-frame training examples.  Longer
inputs are downsampled at indices floor(i*T/300) (strictly increasing, so
label run order survives); shorter inputs are zero-padded with the ignore
label on the padded tail.

Side-view sequences are truncated after the last MTR frame before
standardization; their label scheme drops PR.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from .errors import ConfigError, FormatError, LabelCoverageError, ParseError, ShapeError
from .ingest import View

TARGET_LENGTH = 300
IGNORE_INDEX = 255

TOP_CLASSES = ("IP", "T", "MTR", "PR")
SIDE_CLASSES = ("IP", "T", "MTR")
MTR_INDEX = 2


@dataclass(frozen=True)
class LabelScheme:
    classes: tuple[str, ...]
    ignore_index: int = IGNORE_INDEX

    @classmethod
    def for_view(cls, view: View) -> "LabelScheme":
        return cls(classes=TOP_CLASSES if view is View.TOP else SIDE_CLASSES)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def index_of(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise FormatError(f"unknown label {name!r} for classes {self.classes}")

    def name_of(self, index: int) -> str:
        if index == self.ignore_index:
            return "PAD"
        return self.classes[index]


@dataclass
class Sequence:
    """A standardized training example: exactly 300 rows."""

    id: str
    patient_id: str
    view: View
    values: np.ndarray  # [300, C]
    labels: np.ndarray  # [300] int, class index or IGNORE_INDEX
    original_length: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.shape[0] != TARGET_LENGTH or self.labels.shape != (TARGET_LENGTH,):
            raise ShapeError(
                f"{self.id}: expected {TARGET_LENGTH} rows, got values "
                f"{self.values.shape} labels {self.labels.shape}"
            )

    @property
    def n_valid(self) -> int:
        return int((self.labels != IGNORE_INDEX).sum())


def downsample_indices(n_frames: int, target: int = TARGET_LENGTH) -> np.ndarray:
    """floor(i * T / target) for i in [0, target); strictly increasing for T >= target."""
    return (np.arange(target, dtype=np.int64) * n_frames) // target


def standardize_length(
    values: np.ndarray,
    labels: np.ndarray,
    target: int = TARGET_LENGTH,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (values, labels, original_length) at exactly ``target`` rows."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = values.shape[0]
    if n < 1:
        raise ShapeError("empty sequence")
    if labels.shape[0] != n:
        raise ShapeError(f"labels length {labels.shape[0]} != frames {n}")
    if n == target:
        return values.copy(), labels.copy(), n
    if n > target:
        idx = downsample_indices(n, target)
        return values[idx], labels[idx], n
    out_v = np.zeros((target, values.shape[1]))
    out_v[:n] = values
    out_l = np.full(target, ignore_index, dtype=np.int64)
    out_l[:n] = labels
    return out_v, out_l, n


def label_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Run-length encode labels as (label, start, length) triples."""
    labels = np.asarray(labels)
    runs: list[tuple[int, int, int]] = []
    start = 0
    for t in range(1, labels.size + 1):
        if t == labels.size or labels[t] != labels[start]:
            runs.append((int(labels[start]), start, t - start))
            start = t
    return runs


def truncate_after_mtr(
    values: np.ndarray, labels: np.ndarray, mtr_index: int = MTR_INDEX
) -> tuple[np.ndarray, np.ndarray]:
    """Drop every frame after the last MTR-labeled frame (side views only)."""
    labels = np.asarray(labels, dtype=np.int64)
    where = np.flatnonzero(labels == mtr_index)
    if where.size == 0:
        raise LabelCoverageError("no MTR frame to truncate after")
    end = int(where[-1]) + 1
    return np.asarray(values, dtype=np.float64)[:end], labels[:end]


# ---------------------------------------------------------------------------
# splits and folds
# ---------------------------------------------------------------------------


@dataclass
class Split:
    train: list[Sequence]
    test: list[Sequence]


def split_by_patient(records: Seq[Sequence], test_patient_ids: Iterable[str]) -> Split:
    """Route every sequence by patient id; patients never straddle the split."""
    test_ids = set(test_patient_ids)
    if not test_ids:
        raise ConfigError("test_patient_ids is empty")
    present = {r.patient_id for r in records}
    unknown = test_ids - present
    if unknown:
        raise LookupError(f"unknown patient ids: {sorted(unknown)}")
    train = [r for r in records if r.patient_id not in test_ids]
    test = [r for r in records if r.patient_id in test_ids]
    return Split(train=train, test=test)


@dataclass
class FoldPlan:
    k: int
    folds: list[list[str]]  # patient ids per fold

    def validation_ids(self, fold: int) -> set[str]:
        return set(self.folds[fold])


def kfold_by_patient(records: Seq[Sequence], k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle patients by seed, deal them round-robin into k disjoint folds."""
    patients = sorted({r.patient_id for r in records})
    if len(patients) < k:
        raise ConfigError(f"{len(patients)} patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    folds: list[list[str]] = [[] for _ in range(k)]
    for i, pid in enumerate(order):
        folds[i % k].append(pid)
    return FoldPlan(k=k, folds=folds)


def fold_split(records: Seq[Sequence], plan: FoldPlan, fold: int) -> Split:
    """Training split for one fold: fold patients validate, the rest train."""
    val_ids = plan.validation_ids(fold)
    train = [r for r in records if r.patient_id not in val_ids]
    val = [r for r in records if r.patient_id in val_ids]
    return Split(train=train, test=val)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_labels_csv(labels: np.ndarray, scheme: LabelScheme, path) -> None:
    """``frame,label`` rows with symbolic names (IP/T/MTR/PR)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "label"])
        for t, lab in enumerate(np.asarray(labels)):
            writer.writerow([t, scheme.name_of(int(lab))])


def read_labels_csv(path, scheme: LabelScheme) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "label"]:
            raise ParseError("expected header 'frame,label'", path=path, line=1)
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError("expected two cells", path=path, line=lineno)
            try:
                out.append(scheme.index_of(row[1]))
            except FormatError as err:
                raise ParseError(str(err), path=path, line=lineno)
    return np.asarray(out, dtype=np.int64)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_standardized_csv(seq: Sequence, path) -> None:
    """Per-sequence dataset file: ``frame,ch0..chN,label``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame"] + [f"ch{i}" for i in range(seq.values.shape[1])] + ["label"]
        )
        for t in range(seq.values.shape[0]):
            writer.writerow(
                [t] + [_fmt(v) for v in seq.values[t]] + [int(seq.labels[t])]
            )


def read_standardized_csv(path, seq_id: str = "", patient_id: str = "",
                          view: View | None = None) -> Sequence:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame" or header[-1] != "label":
            raise ParseError("expected header 'frame,ch0..chN,label'", path=path, line=1)
        n_channels = len(header) - 2
        vals, labs = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_channels + 2:
                raise ParseError(f"expected {n_channels + 2} cells", path=path, line=lineno)
            vals.append([float(v) for v in row[1:-1]])
            labs.append(int(row[-1]))
    values = np.asarray(vals)
    labels = np.asarray(labs, dtype=np.int64)
    if view is None:
        view = View.CONTRALATERAL if n_channels == 22 else View.TOP
    original_length = int((labels != IGNORE_INDEX).sum())
    return Sequence(
        id=seq_id or Path(path).stem,
        patient_id=patient_id,
        view=view,
        values=values,
        labels=labels,
        original_length=original_length,
    )


def write_manifest(rows, path) -> None:
    """Dataset manifest CSV: ``id,patient_id,view,original_length,path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "patient_id", "view", "original_length", "path"])
        for r in rows:
            writer.writerow(list(r))


def read_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["id", "patient_id", "view", "original_length", "path"]
        if reader.fieldnames != expected:
            raise ParseError(f"expected header {','.join(expected)}", path=path, line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    {
                        "id": row["id"],
                        "patient_id": row["patient_id"],
                        "view": View(row["view"]),
                        "original_length": int(row["original_length"]),
                        "path": row["path"],
                    }
                )
            except (KeyError, ValueError) as err:
                raise ParseError(str(err), path=path, line=lineno)
    return rows
