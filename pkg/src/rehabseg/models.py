"""The model zoo: pure-LSTM, pure-transformer, and transformer->LSTM stacks.

Transformer path: input projection (C -> 128) + sinusoidal positional
encoding + post-LN encoder blocks + linear head.  LSTM path: stacked LSTM
(hidden 256) + head.  Hybrids run the transformer stack headless and feed
its features into the LSTM stack, whose output drives the head.

``count_params`` is the closed-form twin of the builder; the two must
agree exactly, and an acceptance test holds them to the published sizes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION, __version__
from . import autograd as ag
from . import nn
from .autograd import Tensor
from .dataset import TARGET_LENGTH
from .errors import ConfigError, FormatError, ShapeError

MODEL_ZOO = {
    "LSTM1": ("lstm", 0, 1),
    "LSTM3": ("lstm", 0, 3),
    "Trans3": ("transformer", 3, 0),
    "Trans6": ("transformer", 6, 0),
    "Trans10": ("transformer", 10, 0),
    "Trans3LSTM1": ("hybrid", 3, 1),
    "Trans6LSTM1": ("hybrid", 6, 1),
    "Trans3LSTM3": ("hybrid", 3, 3),
}


@dataclass
class ModelConfig:
    kind: str  # lstm | transformer | hybrid
    n_trans_layers: int
    n_lstm_layers: int
    n_channels: int
    n_classes: int
    embed_dim: int = 128
    n_heads: int = 8
    d_ff: int = 64
    lstm_hidden: int = 256

    def __post_init__(self):
        if self.kind not in ("lstm", "transformer", "hybrid"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind in ("transformer", "hybrid") and self.n_trans_layers < 1:
            raise ConfigError(f"{self.kind} model needs encoder layers")
        if self.kind in ("lstm", "hybrid") and self.n_lstm_layers < 1:
            raise ConfigError(f"{self.kind} model needs LSTM layers")
        if self.kind == "lstm" and self.n_trans_layers != 0:
            raise ConfigError("pure LSTM model cannot have encoder layers")
        if self.kind == "transformer" and self.n_lstm_layers != 0:
            raise ConfigError("pure transformer model cannot have LSTM layers")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by {self.n_heads} heads"
            )

    @classmethod
    def from_name(cls, name: str, n_channels: int, n_classes: int) -> "ModelConfig":
        if name not in MODEL_ZOO:
            raise ConfigError(
                f"unknown model {name!r}; choose from {', '.join(sorted(MODEL_ZOO))}"
            )
        kind, n_trans, n_lstm = MODEL_ZOO[name]
        return cls(
            kind=kind,
            n_trans_layers=n_trans,
            n_lstm_layers=n_lstm,
            n_channels=n_channels,
            n_classes=n_classes,
        )

    @property
    def name(self) -> str:
        parts = []
        if self.n_trans_layers:
            parts.append(f"Trans{self.n_trans_layers}")
        if self.n_lstm_layers:
            parts.append(f"LSTM{self.n_lstm_layers}")
        return "".join(parts)

    @property
    def uses_attention(self) -> bool:
        return self.n_trans_layers > 0


def count_params(config: ModelConfig) -> int:
    """Exact parameter count of build(config), in closed form."""
    d, f, h = config.embed_dim, config.d_ff, config.lstm_hidden
    total = 0
    if config.n_trans_layers:
        total += config.n_channels * d + d  # input projection
        per_layer = (
            4 * (d * d + d)                 # q, k, v, output projections
            + (d * f + f) + (f * d + d)     # feed-forward
            + 4 * d                         # two layer norms
        )
        total += config.n_trans_layers * per_layer
    if config.n_lstm_layers:
        first_in = d if config.n_trans_layers else config.n_channels
        total += nn.LSTMLayer.count_params(first_in, h)
        total += (config.n_lstm_layers - 1) * nn.LSTMLayer.count_params(h, h)
        total += h * config.n_classes + config.n_classes  # head
    else:
        total += d * config.n_classes + config.n_classes
    return total


@dataclass
class AttentionTrace:
    """Per-layer, per-head attention weights from one forward pass."""

    weights: list[np.ndarray]  # n_trans_layers entries of [heads, T, T]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_heads(self) -> int:
        return self.weights[0].shape[0] if self.weights else 0

    def head_mean(self, layer: int = -1) -> np.ndarray:
        return self.weights[layer].mean(axis=0)


class Model:
    """A built segmenter: config, parameters, and the forward graph."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoders: list[nn.EncoderLayer] = []
        self.lstms: list[nn.LSTMLayer] = []
        self.input_proj = None
        self._pe_cache: dict[int, np.ndarray] = {}

        if config.n_trans_layers:
            self.input_proj = nn.Linear(config.n_channels, config.embed_dim, rng, "input_proj")
            for i in range(config.n_trans_layers):
                self.encoders.append(
                    nn.EncoderLayer(config.embed_dim, config.n_heads, config.d_ff,
                                    rng, f"enc{i:02d}")
                )
        if config.n_lstm_layers:
            first_in = config.embed_dim if config.n_trans_layers else config.n_channels
            for i in range(config.n_lstm_layers):
                n_in = first_in if i == 0 else config.lstm_hidden
                self.lstms.append(nn.LSTMLayer(n_in, config.lstm_hidden, rng, f"lstm{i:02d}"))
            head_in = config.lstm_hidden
        else:
            head_in = config.embed_dim
        self.head = nn.Linear(head_in, config.n_classes, rng, "head")

    def params(self) -> list[nn.Parameter]:
        out: list[nn.Parameter] = []
        if self.input_proj is not None:
            out += self.input_proj.params()
        for enc in self.encoders:
            out += enc.params()
        for lstm in self.lstms:
            out += lstm.params()
        out += self.head.params()
        return out

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params())

    def _pe(self, n_frames: int) -> np.ndarray:
        if n_frames not in self._pe_cache:
            self._pe_cache[n_frames] = nn.positional_encoding(n_frames, self.config.embed_dim)
        return self._pe_cache[n_frames]

    def forward(self, values: np.ndarray | Tensor, record_attention: bool = False):
        """Per-frame logits for [B, T, C] (or [T, C]) inputs.

        Returns logits, or (logits, AttentionTrace) when recording.  The
        trace is only defined for single-sequence input.
        """
        x = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float64))
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.config.n_channels:
            raise ShapeError(
                f"model expects {self.config.n_channels} channels, got {x.shape[-1]}"
            )
        record: list | None = None
        if record_attention:
            if not self.config.uses_attention:
                from .errors import CapabilityError

                raise CapabilityError(f"{self.config.name} has no attention layers")
            if x.shape[0] != 1:
                raise ShapeError("attention recording expects a single sequence")
            record = []

        if self.encoders:
            x = self.input_proj(x) + Tensor(self._pe(x.shape[1]))
            for enc in self.encoders:
                x = enc(x, record)
        for lstm in self.lstms:
            x = lstm(x)
        logits = self.head(x)
        if squeeze:
            logits = logits.reshape(*logits.shape[1:])
        if record is not None:
            trace = AttentionTrace(weights=[w[0] for w in record])
            return logits, trace
        return logits

    __call__ = forward

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.data) for p in self.params()]

    def load_state_arrays(self, named: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in named:
                raise FormatError(f"checkpoint missing parameter {p.name}")
            p.data = named[p.name]


def build(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed=seed)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, JSON header, named float64 LE tensors
# ---------------------------------------------------------------------------

_MAGIC = b"RSEGCKPT"


def save_checkpoint(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "package_version": __version__,
        "model": model.config.name,
        "config": asdict(model.config),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, data in arrays:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        named: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            named[name] = data.astype(np.float64)
    model = Model(config, seed=0)
    model.load_state_arrays(named)
    return model
