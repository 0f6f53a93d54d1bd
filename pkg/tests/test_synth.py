import numpy as np
import pytest
from scipy import stats

from helpers import collapse_runs
from rehabseg.dataset import label_runs
from rehabseg.errors import ConfigError
from rehabseg.ingest import N_LANDMARKS, View
from rehabseg.refine import RefineConfig, accept
from rehabseg.synth import DEFAULT_DURATION_RANGES, SynthConfig, generate, generate_one


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a = generate(SynthConfig(seed=5, n_sequences=4))
        b = generate(SynthConfig(seed=5, n_sequences=4))
        for x, y in zip(a, b):
            mask = ~np.isnan(x.raw.values)
            assert np.array_equal(mask, ~np.isnan(y.raw.values))
            assert np.array_equal(x.raw.values[mask], y.raw.values[mask])
            assert np.array_equal(x.labels, y.labels)

    def test_sequences_independent_of_range(self):
        # generating a prefix or a single index yields the same sequence
        full = generate(SynthConfig(seed=9, n_sequences=5))
        solo = generate_one(SynthConfig(seed=9, n_sequences=5), 3)
        mask = ~np.isnan(full[3].raw.values)
        assert np.array_equal(full[3].raw.values[mask], solo.raw.values[mask])

    def test_different_seeds_differ(self):
        a = generate_one(SynthConfig(seed=1), 0)
        b = generate_one(SynthConfig(seed=2), 0)
        assert not np.array_equal(a.raw.values, b.raw.values)


class TestStructure:
    def test_label_runs_in_phase_order(self):
        for item in generate(SynthConfig(seed=11, n_sequences=6)):
            assert collapse_runs(item.labels) == [0, 1, 2, 3]

    def test_durations_within_ranges(self):
        item = generate_one(SynthConfig(seed=2), 0)
        runs = {lab: length for lab, _, length in label_runs(item.labels)}
        for phase_idx, phase in enumerate(("IP", "T", "MTR", "PR")):
            lo, hi = DEFAULT_DURATION_RANGES[phase]
            assert lo <= runs[phase_idx] <= hi

    def test_object_constant_before_first_mtr(self):
        config = SynthConfig(seed=3, n_sequences=3, missing_rate=0.0)
        for item in generate(config):
            first_mtr = int(np.flatnonzero(item.labels == 2)[0])
            obj = item.raw.values[:, N_LANDMARKS]
            assert np.all(obj[:first_mtr] == obj[0])

    def test_object_tracks_hand_during_mtr(self):
        item = generate_one(SynthConfig(seed=4, noise_sd=0.0, missing_rate=0.0), 0)
        mtr = item.labels == 2
        wrist = item.raw.values[mtr, 0]
        obj = item.raw.values[mtr, N_LANDMARKS]
        assert np.allclose(obj - wrist, obj[0] - wrist[0])

    def test_noiseless_channels_piecewise_smooth(self):
        item = generate_one(SynthConfig(seed=6, noise_sd=0.0, missing_rate=0.0), 0)
        wrist = item.raw.values[:, 0]
        # raised-cosine ramps keep |step| well below the total excursion
        assert np.max(np.abs(np.diff(wrist))) < 15.0
        assert not np.isnan(item.raw.values).any()

    def test_top_view_has_no_object_channel(self):
        item = generate_one(SynthConfig(seed=1, view=View.TOP), 0)
        assert item.raw.values.shape[1] == N_LANDMARKS

    def test_patients_assigned_in_blocks(self):
        items = generate(SynthConfig(seed=0, n_sequences=10, sequences_per_patient=5))
        assert [i.patient_id for i in items[:5]] == ["P000"] * 5
        assert [i.patient_id for i in items[5:]] == ["P001"] * 5

    def test_lifting_decreases_y(self):
        item = generate_one(SynthConfig(seed=8, noise_sd=0.0, missing_rate=0.0), 0)
        wrist = item.raw.values[:, 0]
        t_end = int(np.flatnonzero(item.labels == 1)[-1])
        mtr_end = int(np.flatnonzero(item.labels == 2)[-1])
        assert wrist[mtr_end] < wrist[t_end]  # image convention: up is smaller y


class TestMissingness:
    def test_zero_rate_means_no_missing(self):
        item = generate_one(SynthConfig(seed=1, missing_rate=0.0), 0)
        assert not np.isnan(item.raw.values).any()

    def test_rate_roughly_respected(self):
        config = SynthConfig(seed=10, n_sequences=20, missing_rate=0.2)
        fractions = []
        for item in generate(config):
            hand_missing = np.isnan(item.raw.values[:, :N_LANDMARKS]).all(axis=1)
            fractions.append(hand_missing.mean())
        assert abs(np.mean(fractions) - 0.2) < 0.05

    def test_half_missing_rejects_nearly_all(self):
        # binomial oracle: P(fraction <= 0.25) at p=0.5 is astronomically
        # small for every possible length, so every draw should be rejected
        config = SynthConfig(seed=12, n_sequences=40, missing_rate=0.5)
        items = generate(config)
        min_frames = sum(lo for lo, _ in DEFAULT_DURATION_RANGES.values())
        p_accept_bound = stats.binom.cdf(min_frames * 0.25, min_frames, 0.5)
        assert p_accept_bound < 1e-6
        refine_config = RefineConfig()
        rejected = sum(1 for item in items if not accept(item.raw, refine_config))
        assert rejected == len(items)

    def test_default_rate_mostly_accepted(self):
        items = generate(SynthConfig(seed=13, n_sequences=20))
        config = RefineConfig()
        accepted = sum(1 for item in items if accept(item.raw, config))
        assert accepted == len(items)


class TestConfigValidation:
    def test_bad_missing_rate(self):
        with pytest.raises(ConfigError):
            SynthConfig(missing_rate=1.5)

    def test_bad_duration_range(self):
        with pytest.raises(ConfigError):
            SynthConfig(duration_ranges={"IP": (0, 5), "T": (15, 40),
                                         "MTR": (50, 120), "PR": (20, 60)})

    def test_negative_count(self):
        with pytest.raises(ConfigError):
            SynthConfig(n_sequences=-1)
