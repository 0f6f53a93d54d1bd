import numpy as np
import pytest

from rehabseg import models
from rehabseg.errors import CapabilityError, ConfigError, FormatError, ShapeError
from rehabseg.models import Model, ModelConfig, count_params, load_checkpoint, save_checkpoint

rng = np.random.default_rng(11)

# published sizes (millions) for the 22-channel, 4-class configuration
PUBLISHED_SIZES = {
    "LSTM1": 0.28e6,
    "LSTM3": 1.3e6,
    "Trans3": 0.25e6,
    "Trans6": 0.5e6,
    "Trans10": 0.84e6,
    "Trans3LSTM1": 0.65e6,
    "Trans6LSTM1": 0.9e6,
    "Trans3LSTM3": 1.7e6,
}


class TestCountParams:
    @pytest.mark.parametrize("name", sorted(PUBLISHED_SIZES))
    def test_closed_form_equals_enumeration(self, name):
        config = ModelConfig.from_name(name, n_channels=22, n_classes=4)
        model = Model(config, seed=0)
        assert count_params(config) == model.n_params

    @pytest.mark.parametrize("name,target", sorted(PUBLISHED_SIZES.items()))
    def test_within_five_percent_of_published(self, name, target):
        config = ModelConfig.from_name(name, n_channels=22, n_classes=4)
        assert abs(count_params(config) - target) / target < 0.05

    def test_specific_counts(self):
        assert count_params(ModelConfig.from_name("LSTM1", 22, 4)) == 286_724
        assert count_params(ModelConfig.from_name("Trans10", 22, 4)) == 834_820

    def test_encoder_layer_marginal_cost(self):
        c3 = count_params(ModelConfig.from_name("Trans3", 22, 4))
        c10 = count_params(ModelConfig.from_name("Trans10", 22, 4))
        assert (c10 - c3) // 7 == 83_136


class TestModelConfig:
    def test_from_name_unknown(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_name("Trans7", 22, 4)

    def test_name_roundtrip(self):
        for name in PUBLISHED_SIZES:
            config = ModelConfig.from_name(name, 21, 4)
            assert config.name == name

    def test_invalid_combinations(self):
        with pytest.raises(ConfigError):
            ModelConfig(kind="hybrid", n_trans_layers=0, n_lstm_layers=1,
                        n_channels=21, n_classes=4)
        with pytest.raises(ConfigError):
            ModelConfig(kind="lstm", n_trans_layers=2, n_lstm_layers=1,
                        n_channels=21, n_classes=4)
        with pytest.raises(ConfigError):
            ModelConfig(kind="transformer", n_trans_layers=2, n_lstm_layers=0,
                        n_channels=21, n_classes=4, n_heads=7)


class TestForward:
    def test_output_shape(self):
        for name in ("Trans3", "LSTM1", "Trans3LSTM1"):
            config = ModelConfig.from_name(name, 22, 3)
            model = Model(config, seed=1)
            out = model.forward(rng.normal(size=(2, 300, 22)))
            assert out.shape == (2, 300, 3)

    def test_unbatched_input(self):
        model = Model(ModelConfig.from_name("Trans3", 21, 4), seed=1)
        out = model.forward(rng.normal(size=(300, 21)))
        assert out.shape == (300, 4)

    def test_channel_mismatch(self):
        model = Model(ModelConfig.from_name("Trans3", 22, 3), seed=1)
        with pytest.raises(ShapeError):
            model.forward(rng.normal(size=(1, 300, 21)))

    def test_deterministic(self):
        model = Model(ModelConfig.from_name("Trans3LSTM1", 22, 3), seed=3)
        x = rng.normal(size=(1, 50, 22))
        a = model.forward(x).data
        b = model.forward(x).data
        assert np.array_equal(a, b)

    def test_same_seed_same_init(self):
        c = ModelConfig.from_name("Trans3", 22, 3)
        a, b = Model(c, seed=9), Model(c, seed=9)
        for (na, pa), (nb, pb) in zip(a.state_arrays(), b.state_arrays()):
            assert na == nb
            assert np.array_equal(pa, pb)

    def test_channel_permutation_with_permuted_weights(self):
        # permuting input channels and the first-layer rows identically
        # leaves the logits unchanged
        config = ModelConfig.from_name("Trans3", 22, 3)
        model = Model(config, seed=5)
        x = rng.normal(size=(1, 60, 22))
        base = model.forward(x).data
        perm = rng.permutation(22)
        model.input_proj.W.data = model.input_proj.W.data[perm]
        permuted = model.forward(x[:, :, perm]).data
        assert np.allclose(base, permuted, atol=1e-10)
        model.input_proj.W.data = model.input_proj.W.data[np.argsort(perm)]

    def test_lstm_first_layer_permutation(self):
        config = ModelConfig.from_name("LSTM1", 22, 3)
        model = Model(config, seed=5)
        x = rng.normal(size=(1, 40, 22))
        base = model.forward(x).data
        perm = rng.permutation(22)
        model.lstms[0].W.data = model.lstms[0].W.data[perm]
        permuted = model.forward(x[:, :, perm]).data
        assert np.allclose(base, permuted, atol=1e-10)


class TestAttentionTrace:
    def test_trace_shape(self):
        model = Model(ModelConfig.from_name("Trans3", 22, 3), seed=1)
        _, trace = model.forward(rng.normal(size=(300, 22)), record_attention=True)
        assert trace.n_layers == 3
        assert trace.n_heads == 8
        assert trace.weights[0].shape == (8, 300, 300)

    def test_rows_sum_to_one(self):
        model = Model(ModelConfig.from_name("Trans3", 21, 4), seed=2)
        _, trace = model.forward(rng.normal(size=(40, 21)), record_attention=True)
        for heads in trace.weights:
            assert np.allclose(heads.sum(-1), 1.0, atol=1e-6)

    def test_head_mean(self):
        model = Model(ModelConfig.from_name("Trans3", 21, 4), seed=2)
        _, trace = model.forward(rng.normal(size=(30, 21)), record_attention=True)
        assert np.allclose(trace.head_mean(-1), trace.weights[-1].mean(axis=0), atol=1e-15)

    def test_lstm_has_no_trace(self):
        model = Model(ModelConfig.from_name("LSTM1", 22, 3), seed=1)
        with pytest.raises(CapabilityError):
            model.forward(rng.normal(size=(300, 22)), record_attention=True)


class TestCheckpoint:
    def test_roundtrip_preserves_forward(self, tmp_path):
        model = Model(ModelConfig.from_name("Trans3LSTM1", 22, 3), seed=4)
        x = rng.normal(size=(1, 50, 22))
        want = model.forward(x).data
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        clone = load_checkpoint(path)
        assert clone.config == model.config
        assert np.array_equal(clone.forward(x).data, want)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_idempotent_bytes(self, tmp_path):
        model = Model(ModelConfig.from_name("LSTM1", 21, 3), seed=4)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(model, p2)
        assert p1.read_bytes() == p2.read_bytes()
