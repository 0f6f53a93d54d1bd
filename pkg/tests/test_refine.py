import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import nearest_observed_oracle, savgol_oracle
from rehabseg.errors import ConfigError, ShapeError, UnrecoverableChannelError
from rehabseg.ingest import RawSequence, View, channel_names
from rehabseg.refine import (
    RefineConfig,
    accept,
    interpolate_nn,
    missing_fraction,
    refine_sequence,
    savgol,
    write_rejection_manifest,
)


def make_sequence(view, n=300, hand_missing=(), object_missing=()):
    values = np.random.default_rng(0).uniform(100, 400, (n, view.n_channels))
    values[list(hand_missing), :21] = np.nan
    if view.has_object_channel and len(object_missing):
        values[list(object_missing), 21] = np.nan
    return RawSequence(view=view, values=values, channel_names=channel_names(view))


class TestMissingFraction:
    def test_counts_fully_missing_hand_frames(self):
        seq = make_sequence(View.CONTRALATERAL, 300, hand_missing=range(75))
        hand, obj = missing_fraction(seq)
        assert hand == 0.25
        assert obj == 0.0

    def test_76_of_300(self):
        seq = make_sequence(View.CONTRALATERAL, 300, hand_missing=range(76))
        hand, _ = missing_fraction(seq)
        assert hand == pytest.approx(76 / 300)

    def test_no_object_channel_means_zero_fraction(self):
        seq = make_sequence(View.TOP, 300, hand_missing=range(10))
        _, obj = missing_fraction(seq)
        assert obj == 0.0

    def test_partial_landmark_loss_is_not_hand_missing(self):
        seq = make_sequence(View.TOP, 10)
        seq.values[0, :5] = np.nan  # some but not all landmarks
        hand, _ = missing_fraction(seq)
        assert hand == 0.0


class TestAccept:
    @pytest.mark.parametrize("n_missing,expected", [(60, True), (75, True), (78, False), (90, False)])
    def test_quarter_boundary(self, n_missing, expected):
        # exactly 25% stays in; strictly more goes out
        seq = make_sequence(View.CONTRALATERAL, 300, hand_missing=range(n_missing))
        assert accept(seq, RefineConfig()) is expected

    def test_object_fraction_gates_too(self):
        seq = make_sequence(View.CONTRALATERAL, 300, object_missing=range(80))
        assert not accept(seq, RefineConfig())

    def test_clean_sequence_accepted(self):
        assert accept(make_sequence(View.TOP, 40), RefineConfig())

    @given(st.integers(0, 40), st.integers(0, 39))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_missingness(self, base, extra):
        config = RefineConfig()
        smaller = make_sequence(View.TOP, 80, hand_missing=range(base))
        larger = make_sequence(View.TOP, 80, hand_missing=range(base + extra))
        if not accept(smaller, config):
            assert not accept(larger, config)


class TestInterpolateNN:
    def test_tie_goes_to_earlier(self):
        out = interpolate_nn(np.array([1.0, np.nan, 3.0]))
        assert list(out) == [1.0, 1.0, 3.0]

    def test_single_observation_floods(self):
        out = interpolate_nn(np.array([np.nan, np.nan, 5.0]))
        assert list(out) == [5.0, 5.0, 5.0]

    def test_interior_gap(self):
        out = interpolate_nn(np.array([2.0, np.nan, np.nan, np.nan, 10.0]))
        assert list(out) == [2.0, 2.0, 2.0, 10.0, 10.0]

    def test_identity_when_fully_observed(self):
        x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        assert np.array_equal(interpolate_nn(x), x)

    def test_all_missing_raises(self):
        with pytest.raises(UnrecoverableChannelError):
            interpolate_nn(np.array([np.nan, np.nan]))

    def test_every_three_element_pattern_matches_oracle(self):
        values = np.array([10.0, 20.0, 30.0])
        for mask in itertools.product([False, True], repeat=3):
            if all(mask):
                continue
            channel = values.copy()
            channel[list(mask)] = np.nan
            assert np.array_equal(interpolate_nn(channel), nearest_observed_oracle(channel))

    @given(st.lists(st.booleans(), min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_random_masks_match_oracle(self, mask):
        if all(mask):
            mask[0] = False
        channel = np.arange(1.0, len(mask) + 1.0)
        channel[np.array(mask)] = np.nan
        assert np.array_equal(interpolate_nn(channel), nearest_observed_oracle(channel))


class TestSavgol:
    def test_constant_unchanged(self):
        x = np.full(11, 4.0)
        for window, order in [(5, 2), (7, 3), (11, 3)]:
            assert np.allclose(savgol(x, window, order), x, rtol=0, atol=1e-12)

    def test_linear_ramp_unchanged(self):
        x = np.arange(21.0)
        assert np.allclose(savgol(x, 5, 2), x, rtol=1e-12)

    def test_impulse_gives_classic_kernel(self):
        x = np.zeros(11)
        x[5] = 1.0
        out = savgol(x, 5, 2)
        assert out[5] == pytest.approx(17 / 35)
        assert out[4] == pytest.approx(12 / 35)
        assert out[6] == pytest.approx(12 / 35)
        assert out[3] == pytest.approx(-3 / 35)
        assert out[7] == pytest.approx(-3 / 35)

    def test_matches_per_window_fit_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-5, 5, 60)
        for window, order in [(5, 2), (7, 3), (11, 3)]:
            got = savgol(x, window, order)
            want = savgol_oracle(x, window, order)
            assert np.allclose(got, want, rtol=1e-9, atol=1e-12)

    def test_polynomial_reproduction_including_edges(self):
        t = np.arange(40.0)
        x = 0.5 * t**3 - 2 * t**2 + t - 7
        out = savgol(x, 11, 3)
        assert np.allclose(out, x, rtol=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        u, v = rng.normal(size=50), rng.normal(size=50)
        a, b = 2.5, -1.25
        left = savgol(a * u + b * v, 7, 2)
        right = a * savgol(u, 7, 2) + b * savgol(v, 7, 2)
        assert np.allclose(left, right, rtol=1e-9, atol=1e-12)

    def test_short_channel_rejected(self):
        with pytest.raises(ShapeError):
            savgol(np.zeros(5), 7, 2)

    def test_bad_window_rejected(self):
        with pytest.raises(ConfigError):
            savgol(np.zeros(20), 6, 2)
        with pytest.raises(ConfigError):
            savgol(np.zeros(20), 5, 5)


class TestRefineSequence:
    def test_smooths_and_keeps_shape(self):
        seq = make_sequence(View.CONTRALATERAL, 120)
        result = refine_sequence(seq, RefineConfig())
        assert result.accepted
        assert result.sequence.values.shape == seq.values.shape
        assert not np.isnan(result.sequence.values).any()

    def test_rejection_carries_fractions(self):
        seq = make_sequence(View.TOP, 300, hand_missing=range(90))
        result = refine_sequence(seq, RefineConfig())
        assert not result.accepted
        assert result.sequence is None
        assert result.hand_fraction == pytest.approx(0.30)

    def test_scattered_missing_filled(self):
        seq = make_sequence(View.TOP, 200, hand_missing=range(0, 200, 10))
        result = refine_sequence(seq, RefineConfig())
        assert result.accepted
        assert not np.isnan(result.sequence.values).any()

    def test_dead_channel_propagates_error(self):
        seq = make_sequence(View.CONTRALATERAL, 40)
        seq.values[:, 5] = np.nan  # one landmark never observed, hand frames fine
        with pytest.raises(UnrecoverableChannelError):
            refine_sequence(seq, RefineConfig())


class TestRefineConfig:
    def test_defaults(self):
        config = RefineConfig()
        assert config.max_missing_fraction == 0.25
        assert config.sg_window == 11
        assert config.sg_polyorder == 3

    @pytest.mark.parametrize("kwargs", [
        {"max_missing_fraction": 1.5},
        {"sg_window": 4},
        {"sg_window": -3},
        {"sg_polyorder": 11},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            RefineConfig(**kwargs)


def test_rejection_manifest_format(tmp_path):
    path = tmp_path / "manifest.csv"
    write_rejection_manifest([("seq1", 0.3, 0.0, False), ("seq2", 0.1, 0.05, True)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "sequence_id,hand_fraction,object_fraction,accepted"
    assert lines[1] == "seq1,0.3,0.0,False"
    assert lines[2] == "seq2,0.1,0.05,True"
