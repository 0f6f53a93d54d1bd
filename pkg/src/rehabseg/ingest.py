"""Parse per-frame detector output and assemble multichannel y-series.

Input files are line-delimited JSON, one frame per line (see the format
notes on ``parse_detections`` / ``parse_landmarks``).  The assembled
series keeps only y-coordinates, one channel per hand landmark plus, for
the contralateral view, the target object's bounding-box center.  Missing
observations are carried as NaN end to end and serialized as the literal
``nan`` in CSV.

Coordinates follow the image convention: y grows downward.  Values are
raw detector pixels; everything downstream is unit-agnostic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ParseError, ShapeError

N_LANDMARKS = 21

# the twelve tabletop objects a sequence may interact with
OBJECT_CLASSES = (
    "wooden_block_10cm",
    "wooden_block_7.5cm",
    "wooden_block_5cm",
    "wooden_block_2.5cm",
    "cricket_ball",
    "sharpening_stone",
    "tumbler",
    "thick_alloy_tube",
    "thin_alloy_tube",
    "washer",
    "ball_bearing",
    "marble",
)


class View(str, Enum):
    TOP = "top"
    IPSILATERAL = "ipsilateral"
    CONTRALATERAL = "contralateral"

    @property
    def n_channels(self) -> int:
        return N_LANDMARKS + 1 if self is View.CONTRALATERAL else N_LANDMARKS

    @property
    def has_object_channel(self) -> bool:
        return self is View.CONTRALATERAL


@dataclass(frozen=True)
class Detection:
    """One detector hit: class name, confidence, pixel box (x1,y1,x2,y2)."""

    class_label: str
    score: float
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise FormatError(f"score {self.score} outside [0, 1]")
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise FormatError(f"bbox {self.bbox} not ordered (x1<x2, y1<y2)")

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


@dataclass
class DetectionFrame:
    frame_index: int
    detections: list[Detection] = field(default_factory=list)


@dataclass
class LandmarkFrame:
    frame_index: int
    landmarks: Optional[np.ndarray] = None  # [21, 2] pixel coords, or None

    def __post_init__(self):
        if self.landmarks is not None:
            self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
            if self.landmarks.shape != (N_LANDMARKS, 2):
                raise FormatError(
                    f"frame {self.frame_index}: expected {N_LANDMARKS} (x,y) pairs, "
                    f"got shape {self.landmarks.shape}"
                )


@dataclass
class RawSequence:
    """Pre-refinement y-coordinate matrix; entries may be NaN (missing)."""

    view: View
    values: np.ndarray  # [T, C] float64 with NaN for missing
    channel_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be [T, C], got {self.values.shape}")
        if self.values.shape[1] != self.view.n_channels:
            raise ShapeError(
                f"{self.view.value} view needs {self.view.n_channels} channels, "
                f"got {self.values.shape[1]}"
            )
        if len(self.channel_names) != self.values.shape[1]:
            raise ShapeError("channel_names length does not match channel count")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def channel_names(view: View) -> list[str]:
    return [f"ch{i}" for i in range(view.n_channels)]


# ---------------------------------------------------------------------------
# line-delimited JSON readers
# ---------------------------------------------------------------------------


def _read_jsonl(path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(f"invalid JSON ({err.msg})", path=path, line=lineno)
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path=path, line=lineno)
            rows.append((lineno, obj))
    return rows


def _frame_index(obj: dict, path, lineno) -> int:
    try:
        idx = obj["frame"]
    except KeyError:
        raise ParseError("missing 'frame' key", path=path, line=lineno)
    if not isinstance(idx, int) or idx < 0:
        raise ParseError(f"frame index {idx!r} is not a non-negative integer",
                         path=path, line=lineno)
    return idx


def _check_increasing(frames: Sequence[int], path) -> None:
    for prev, cur in zip(frames, frames[1:]):
        if cur == prev:
            raise FormatError(f"{path}: duplicate frame index {cur}")
        if cur < prev:
            raise FormatError(f"{path}: frame indices not increasing ({prev} -> {cur})")


def parse_detections(path) -> list[DetectionFrame]:
    """Read a detections file: one ``{"frame": ..., "detections": [...]}`` per line."""
    frames: list[DetectionFrame] = []
    for lineno, obj in _read_jsonl(path):
        idx = _frame_index(obj, path, lineno)
        raw = obj.get("detections")
        if not isinstance(raw, list):
            raise ParseError("missing or non-list 'detections'", path=path, line=lineno)
        dets = []
        for d in raw:
            try:
                dets.append(
                    Detection(
                        class_label=str(d["class"]),
                        score=float(d["score"]),
                        bbox=tuple(float(v) for v in d["bbox"]),
                    )
                )
            except (KeyError, TypeError, ValueError, FormatError) as err:
                raise ParseError(f"bad detection entry: {err}", path=path, line=lineno)
        frames.append(DetectionFrame(frame_index=idx, detections=dets))
    _check_increasing([f.frame_index for f in frames], path)
    return frames


def parse_landmarks(path) -> list[LandmarkFrame]:
    """Read a landmarks file: ``{"frame": ..., "landmarks": [[x,y]*21] | null}`` per line."""
    frames: list[LandmarkFrame] = []
    for lineno, obj in _read_jsonl(path):
        idx = _frame_index(obj, path, lineno)
        if "landmarks" not in obj:
            raise ParseError("missing 'landmarks' key", path=path, line=lineno)
        raw = obj["landmarks"]
        if raw is None:
            frames.append(LandmarkFrame(frame_index=idx, landmarks=None))
            continue
        try:
            frames.append(LandmarkFrame(frame_index=idx, landmarks=np.asarray(raw, dtype=np.float64)))
        except (ValueError, FormatError) as err:
            raise ParseError(f"bad landmarks entry: {err}", path=path, line=lineno)
    _check_increasing([f.frame_index for f in frames], path)
    return frames


# ---------------------------------------------------------------------------
# channel assembly
# ---------------------------------------------------------------------------


def select_object_center(frame: DetectionFrame, target_class: str) -> Optional[tuple[float, float]]:
    """Center of the best detection for this frame, or None when empty.

    Prefers the highest-scoring detection of ``target_class``.  When the
    target class is absent the highest-scoring detection of any class
    stands in (there is exactly one object in the scene, so localization
    is trustworthy even when classification is not).  Score ties go to the
    earlier list entry.
    """
    if not frame.detections:
        return None
    matching = [d for d in frame.detections if d.class_label == target_class]
    pool = matching if matching else frame.detections
    best = max(pool, key=lambda d: d.score)  # max keeps the first of equals
    return best.center


def assemble_channels(
    landmarks: Sequence[LandmarkFrame],
    object_centers: Optional[Sequence[Optional[tuple[float, float]]]],
    view: View,
) -> RawSequence:
    """Stack landmark y-channels (and the object-center y for contralateral).

    Row t of the output corresponds to input frame t; frames where a source
    is absent get NaN in that source's channels only.
    """
    if view.has_object_channel:
        if object_centers is None:
            raise ShapeError("contralateral view requires object centers")
        if len(object_centers) != len(landmarks):
            raise ShapeError(
                f"object series length {len(object_centers)} != "
                f"landmark series length {len(landmarks)}"
            )
    n = len(landmarks)
    values = np.full((n, view.n_channels), np.nan)
    for t, frame in enumerate(landmarks):
        if frame.landmarks is not None:
            values[t, :N_LANDMARKS] = frame.landmarks[:, 1]
    if view.has_object_channel:
        for t, center in enumerate(object_centers):
            if center is not None:
                values[t, N_LANDMARKS] = center[1]
    return RawSequence(view=view, values=values, channel_names=channel_names(view))


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))  # shortest round-trip form; NaN prints as 'nan'


def write_sequence_csv(values: np.ndarray, path) -> None:
    """Write an assembled [T, C] matrix as ``frame,ch0,...,chN`` CSV."""
    values = np.asarray(values, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"ch{i}" for i in range(values.shape[1])])
        for t, row in enumerate(values):
            writer.writerow([t] + [_fmt(v) for v in row])


def read_sequence_csv(path, view: Optional[View] = None) -> RawSequence:
    """Read an assembled-sequence CSV back into a RawSequence.

    When ``view`` is omitted it is inferred from the channel count: 22
    channels means contralateral, 21 is reported as top (top and
    ipsilateral are indistinguishable on disk and interchangeable for
    refinement).
    """
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path, line=1)
        if not header or header[0] != "frame":
            raise ParseError("expected header starting with 'frame'", path=path, line=1)
        n_channels = len(header) - 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_channels + 1:
                raise ParseError(f"expected {n_channels + 1} cells, got {len(row)}",
                                 path=path, line=lineno)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as err:
                raise ParseError(str(err), path=path, line=lineno)
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), n_channels)
    if view is None:
        if n_channels == N_LANDMARKS + 1:
            view = View.CONTRALATERAL
        elif n_channels == N_LANDMARKS:
            view = View.TOP
        else:
            raise FormatError(f"{path}: cannot infer view from {n_channels} channels")
    return RawSequence(view=view, values=values, channel_names=channel_names(view))
