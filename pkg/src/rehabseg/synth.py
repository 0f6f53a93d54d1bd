"""Synthetic reach-grasp-place sequences with ground-truth phase labels.

Each sequence walks through the four phases in order: the wrist descends
onto the object (IP), holds at grasp height (T), lifts to shelf height
(MTR), and parks at the shelf before the hand withdraws (PR).  Ramps are
raised-cosine so refinement's polynomial smoothing barely perturbs them.
Image convention: y grows downward, so lifting decreases y.

Landmark channels are the wrist profile plus a fixed per-landmark offset
plus Gaussian noise.  The object channel (contralateral only) sits at
table height until the first MTR frame, tracks the hand during MTR, and
rests at shelf height through PR; it carries no noise, which keeps the
"constant until lifted" invariant exact.

Generation is deterministic: sequence i uses the sub-generator seeded by
(seed, i), so any shard of the sequence range reproduces identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .ingest import N_LANDMARKS, RawSequence, View, channel_names

DEFAULT_DURATION_RANGES = {
    "IP": (40, 90),
    "T": (15, 40),
    "MTR": (50, 120),
    "PR": (20, 60),
}

PHASES = ("IP", "T", "MTR", "PR")

# scene geometry in pixels (y down)
REST_Y = 260.0
GRASP_Y = 400.0
SHELF_Y = 140.0
WITHDRAW_RISE = 70.0
OBJECT_GRIP_OFFSET = 12.0


@dataclass
class SynthConfig:
    seed: int = 0
    n_sequences: int = 10
    view: View = View.CONTRALATERAL
    duration_ranges: dict[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_DURATION_RANGES)
    )
    noise_sd: float = 2.0
    missing_rate: float = 0.05
    sequences_per_patient: int = 5

    def __post_init__(self):
        if self.n_sequences < 0:
            raise ConfigError("n_sequences must be non-negative")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigError(f"missing_rate {self.missing_rate} outside [0, 1]")
        if self.sequences_per_patient < 1:
            raise ConfigError("sequences_per_patient must be positive")
        for phase in PHASES:
            lo, hi = self.duration_ranges[phase]
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad duration range for {phase}: ({lo}, {hi})")


@dataclass
class SynthSequence:
    id: str
    patient_id: str
    raw: RawSequence
    labels: np.ndarray  # [T] phase index per frame (top-view scheme, 0..3)


def _raised_cosine(start: float, stop: float, n: int) -> np.ndarray:
    """Smooth monotone ramp from start to stop over n samples."""
    phase = np.linspace(0.0, np.pi, n)
    return start + (stop - start) * 0.5 * (1.0 - np.cos(phase))


def _wrist_profile(durations: dict[str, int]) -> np.ndarray:
    ip = _raised_cosine(REST_Y, GRASP_Y, durations["IP"])
    tt = np.full(durations["T"], GRASP_Y)
    mtr = _raised_cosine(GRASP_Y, SHELF_Y, durations["MTR"])
    n_pr = durations["PR"]
    hold = n_pr - n_pr // 3
    pr = np.concatenate(
        [np.full(hold, SHELF_Y), _raised_cosine(SHELF_Y, SHELF_Y + WITHDRAW_RISE, n_pr - hold)]
    )
    return np.concatenate([ip, tt, mtr, pr])


def _object_profile(durations: dict[str, int], wrist: np.ndarray) -> np.ndarray:
    n_ip, n_t, n_mtr = durations["IP"], durations["T"], durations["MTR"]
    table_y = GRASP_Y + OBJECT_GRIP_OFFSET
    out = np.empty(wrist.size)
    lift_start = n_ip + n_t
    lift_end = lift_start + n_mtr
    out[:lift_start] = table_y
    out[lift_start:lift_end] = wrist[lift_start:lift_end] + OBJECT_GRIP_OFFSET
    out[lift_end:] = SHELF_Y + OBJECT_GRIP_OFFSET
    return out


def generate_one(config: SynthConfig, index: int) -> SynthSequence:
    """Build sequence ``index`` of the run; independent of all other indices."""
    rng = np.random.default_rng([config.seed, index])
    durations = {
        phase: int(rng.integers(lo, hi + 1))
        for phase, (lo, hi) in ((p, config.duration_ranges[p]) for p in PHASES)
    }
    wrist = _wrist_profile(durations)
    n = wrist.size
    labels = np.concatenate(
        [np.full(durations[p], i, dtype=np.int64) for i, p in enumerate(PHASES)]
    )

    offsets = rng.uniform(-40.0, 0.0, size=N_LANDMARKS)
    offsets[0] = 0.0  # landmark 0 is the wrist itself
    hand = wrist[:, None] + offsets[None, :]
    if config.noise_sd > 0:
        hand = hand + rng.normal(0.0, config.noise_sd, size=hand.shape)

    view = config.view
    values = np.empty((n, view.n_channels))
    values[:, :N_LANDMARKS] = hand
    if view.has_object_channel:
        values[:, N_LANDMARKS] = _object_profile(durations, wrist)

    if config.missing_rate > 0:
        hand_missing = rng.random(n) < config.missing_rate
        values[hand_missing, :N_LANDMARKS] = np.nan
        if view.has_object_channel:
            obj_missing = rng.random(n) < config.missing_rate
            values[obj_missing, N_LANDMARKS] = np.nan

    patient = index // config.sequences_per_patient
    return SynthSequence(
        id=f"syn{index:04d}",
        patient_id=f"P{patient:03d}",
        raw=RawSequence(view=view, values=values, channel_names=channel_names(view)),
        labels=labels,
    )


def generate(config: SynthConfig) -> list[SynthSequence]:
    """All sequences for this config, deterministically ordered by index."""
    return [generate_one(config, i) for i in range(config.n_sequences)]


def iter_generate(config: SynthConfig) -> Iterator[SynthSequence]:
    for i in range(config.n_sequences):
        yield generate_one(config, i)
