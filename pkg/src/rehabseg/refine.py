"""Sequence refinement: missingness gate, gap filling, smoothing.

Order matters and is fixed: a sequence is first accepted or rejected on
its per-source missing fractions (strictly more than the threshold
rejects), surviving gaps are filled by nearest-neighbor interpolation,
and each channel is smoothed with a Savitzky-Golay filter.

Missingness is counted per source rather than per channel: the hand
detector emits all 21 landmarks or none, and the object channel fails
independently of the hand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import savgol_filter

from .errors import ConfigError, ShapeError, UnrecoverableChannelError
from .ingest import N_LANDMARKS, RawSequence


@dataclass
class RefineConfig:
    max_missing_fraction: float = 0.25
    sg_window: int = 11
    sg_polyorder: int = 3

    def __post_init__(self):
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ConfigError(f"max_missing_fraction {self.max_missing_fraction} outside [0, 1]")
        if self.sg_window <= 0 or self.sg_window % 2 == 0:
            raise ConfigError(f"sg_window must be odd and positive, got {self.sg_window}")
        if not 0 <= self.sg_polyorder < self.sg_window:
            raise ConfigError(
                f"sg_polyorder must be in [0, sg_window), got {self.sg_polyorder}"
            )


@dataclass
class RefineResult:
    """Outcome of refine_sequence: either a clean sequence or a rejection."""

    accepted: bool
    hand_fraction: float
    object_fraction: float
    sequence: Optional[RawSequence] = None


def missing_fraction(sequence: RawSequence) -> tuple[float, float]:
    """Per-source missing fractions (hand, object).

    A frame counts as hand-missing when all 21 landmark channels are NaN;
    the object fraction is 0 for views without an object channel.
    """
    values = sequence.values
    if values.shape[0] < 1:
        raise ShapeError("sequence has no frames")
    hand_missing = np.isnan(values[:, :N_LANDMARKS]).all(axis=1)
    hand = float(hand_missing.mean())
    obj = 0.0
    if sequence.view.has_object_channel:
        obj = float(np.isnan(values[:, N_LANDMARKS]).mean())
    return hand, obj


def accept(sequence: RawSequence, config: RefineConfig) -> bool:
    """True iff both per-source fractions are at or below the threshold."""
    hand, obj = missing_fraction(sequence)
    return hand <= config.max_missing_fraction and obj <= config.max_missing_fraction


def interpolate_nn(channel: np.ndarray) -> np.ndarray:
    """Replace NaN entries with the nearest observed value (ties go earlier).

    Leading and trailing gaps take the nearest interior observation.
    """
    channel = np.asarray(channel, dtype=np.float64)
    observed = np.flatnonzero(~np.isnan(channel))
    if observed.size == 0:
        raise UnrecoverableChannelError("channel has no observed values")
    if observed.size == channel.size:
        return channel.copy()
    idx = np.arange(channel.size)
    # position of each index in the observed list
    right = np.searchsorted(observed, idx, side="left")
    left = np.clip(right - 1, 0, observed.size - 1)
    right = np.clip(right, 0, observed.size - 1)
    d_left = np.abs(idx - observed[left])
    d_right = np.abs(observed[right] - idx)
    pick = np.where(d_left <= d_right, observed[left], observed[right])
    return channel[pick]


def savgol(channel: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    """Savitzky-Golay smoothing: windowed least-squares polynomial fits.

    Interior samples take the center evaluation of the fit; the first and
    last half-windows are evaluated off-center from the first/last full
    window's fit, so inputs that are globally polynomial of degree at most
    ``polyorder`` are reproduced exactly.
    """
    channel = np.asarray(channel, dtype=np.float64)
    if window <= 0 or window % 2 == 0:
        raise ConfigError(f"window must be odd and positive, got {window}")
    if not 0 <= polyorder < window:
        raise ConfigError(f"polyorder must be in [0, window), got {polyorder}")
    if channel.size < window:
        raise ShapeError(f"channel length {channel.size} shorter than window {window}")
    return savgol_filter(channel, window_length=window, polyorder=polyorder, mode="interp")


def refine_sequence(sequence: RawSequence, config: RefineConfig) -> RefineResult:
    """Gate, interpolate, and smooth one sequence; see module docstring."""
    hand, obj = missing_fraction(sequence)
    if hand > config.max_missing_fraction or obj > config.max_missing_fraction:
        return RefineResult(accepted=False, hand_fraction=hand, object_fraction=obj)
    cleaned = np.empty_like(sequence.values)
    for c in range(sequence.values.shape[1]):
        filled = interpolate_nn(sequence.values[:, c])
        cleaned[:, c] = savgol(filled, config.sg_window, config.sg_polyorder)
    refined = RawSequence(
        view=sequence.view, values=cleaned, channel_names=list(sequence.channel_names)
    )
    return RefineResult(
        accepted=True, hand_fraction=hand, object_fraction=obj, sequence=refined
    )


def write_rejection_manifest(rows, path) -> None:
    """Write/overwrite the refinement manifest CSV.

    ``rows`` holds (sequence_id, hand_fraction, object_fraction, accepted).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence_id", "hand_fraction", "object_fraction", "accepted"])
        for seq_id, hand, obj, ok in rows:
            writer.writerow([seq_id, repr(float(hand)), repr(float(obj)), str(bool(ok))])
