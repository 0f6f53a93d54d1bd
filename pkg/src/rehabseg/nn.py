"""Layers, loss, optimizer, and gradient checking on top of ``autograd``.

Shapes follow the convention [B, T, D] = batch, frames, features; layers
also accept unbatched [T, D] input where noted.  Weight matrices are
initialized uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases at zero,
from a caller-supplied seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, EmptyLossError, ShapeError


class Parameter:
    """A trainable tensor plus its Adam state."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        if value.shape != self.tensor.data.shape:
            raise ShapeError(f"{self.name}: cannot assign shape {value.shape}")
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.tensor.data.shape})"


def init_weight(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Linear:
    """y = x @ W + b over the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "linear"):
        self.n_in = n_in
        self.n_out = n_out
        self.W = Parameter(f"{name}.W", init_weight(rng, n_in, (n_in, n_out)))
        self.b = Parameter(f"{name}.b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear expects last dim {self.n_in}, got {x.shape}")
        if x.ndim > 2:
            lead = x.shape[:-1]
            flat = x.reshape(-1, self.n_in)
            return (flat @ self.W.tensor + self.b.tensor).reshape(*lead, self.n_out)
        return x @ self.W.tensor + self.b.tensor

    def params(self) -> list[Parameter]:
        return [self.W, self.b]


class LayerNorm:
    """Per-position normalization over the feature axis with learned affine."""

    def __init__(self, dim: int, name: str = "ln", eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter(f"{name}.gain", np.ones(dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain.tensor, self.bias.tensor, self.eps)

    def params(self) -> list[Parameter]:
        return [self.gain, self.bias]


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(d_k)) v along the last two axes.

    Returns (output, weights); weights rows sum to 1 and are kept in the
    graph, so attention itself is differentiable end to end.
    """
    d_k = q.shape[-1]
    if d_k == 0 or k.shape[-1] != d_k:
        raise ShapeError(f"query/key feature dims disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths disagree: {k.shape} vs {v.shape}")
    scores = q @ k.swapaxes(-1, -2)
    weights = ag.softmax(scores, scale=1.0 / np.sqrt(d_k))
    return weights @ v, weights


class MultiHeadAttention:
    """Multi-head self-attention with combined QKV projections."""

    def __init__(self, embed_dim: int, n_heads: int, rng: np.random.Generator, name: str = "mha"):
        if embed_dim % n_heads != 0:
            raise ConfigError(f"embed dim {embed_dim} not divisible by {n_heads} heads")
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.d_head = embed_dim // n_heads
        self.wq = Linear(embed_dim, embed_dim, rng, f"{name}.wq")
        self.wk = Linear(embed_dim, embed_dim, rng, f"{name}.wk")
        self.wv = Linear(embed_dim, embed_dim, rng, f"{name}.wv")
        self.wo = Linear(embed_dim, embed_dim, rng, f"{name}.wo")

    def _split_heads(self, x: Tensor, batch: int, frames: int) -> Tensor:
        # [B,T,D] -> [B*h, T, d_head]
        x = x.reshape(batch, frames, self.n_heads, self.d_head)
        x = x.transpose((0, 2, 1, 3))
        return x.reshape(batch * self.n_heads, frames, self.d_head)

    def __call__(self, x: Tensor, record: list | None = None) -> Tensor:
        batch, frames, _ = x.shape
        q = self._split_heads(self.wq(x), batch, frames)
        k = self._split_heads(self.wk(x), batch, frames)
        v = self._split_heads(self.wv(x), batch, frames)
        ctx, weights = scaled_dot_product_attention(q, k, v)
        if record is not None:
            record.append(
                weights.data.reshape(batch, self.n_heads, frames, frames).copy()
            )
        ctx = ctx.reshape(batch, self.n_heads, frames, self.d_head)
        ctx = ctx.transpose((0, 2, 1, 3)).reshape(batch, frames, self.embed_dim)
        return self.wo(ctx)

    def params(self) -> list[Parameter]:
        return self.wq.params() + self.wk.params() + self.wv.params() + self.wo.params()


class FeedForward:
    """Position-wise ReLU MLP: D -> d_ff -> D."""

    def __init__(self, embed_dim: int, d_ff: int, rng: np.random.Generator, name: str = "ffn"):
        self.lin1 = Linear(embed_dim, d_ff, rng, f"{name}.lin1")
        self.lin2 = Linear(d_ff, embed_dim, rng, f"{name}.lin2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ag.relu(self.lin1(x)))

    def params(self) -> list[Parameter]:
        return self.lin1.params() + self.lin2.params()


class EncoderLayer:
    """Post-LN transformer encoder block: MHA and FFN sublayers."""

    def __init__(self, embed_dim: int, n_heads: int, d_ff: int,
                 rng: np.random.Generator, name: str = "enc"):
        self.attn = MultiHeadAttention(embed_dim, n_heads, rng, f"{name}.attn")
        self.ln1 = LayerNorm(embed_dim, f"{name}.ln1")
        self.ffn = FeedForward(embed_dim, d_ff, rng, f"{name}.ffn")
        self.ln2 = LayerNorm(embed_dim, f"{name}.ln2")

    def __call__(self, x: Tensor, record: list | None = None) -> Tensor:
        x = self.ln1(x + self.attn(x, record))
        return self.ln2(x + self.ffn(x))

    def params(self) -> list[Parameter]:
        return (
            self.attn.params() + self.ln1.params() + self.ffn.params() + self.ln2.params()
        )


def positional_encoding(n_frames: int, dim: int = 128) -> np.ndarray:
    """Sinusoidal table: PE[t, 2i] = sin(t / 10000^(2i/dim)), PE[t, 2i+1] = cos(...)."""
    t = np.arange(n_frames, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angles = t / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    table = np.empty((n_frames, dim))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LSTMLayer:
    """Unidirectional LSTM, zero initial state, gate order (i, f, g, o).

    The whole recurrence is one graph node with a hand-written BPTT
    backward; taping every timestep individually costs far more memory
    traffic than the recurrence itself.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, name: str = "lstm"):
        self.n_in = n_in
        self.hidden = hidden
        self.W = Parameter(f"{name}.W", init_weight(rng, n_in, (n_in, 4 * hidden)))
        self.U = Parameter(f"{name}.U", init_weight(rng, hidden, (hidden, 4 * hidden)))
        self.b = Parameter(f"{name}.b", np.zeros(4 * hidden))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"lstm expects input dim {self.n_in}, got {x.shape}")
        batch, frames, _ = x.shape
        hid = self.hidden
        W, U, b = self.W.tensor, self.U.tensor, self.b.tensor
        xd = x.data

        xw = xd.reshape(-1, self.n_in) @ W.data + b.data
        xw = xw.reshape(batch, frames, 4 * hid)
        gi = np.empty((batch, frames, hid))
        gf = np.empty_like(gi)
        gg = np.empty_like(gi)
        go = np.empty_like(gi)
        tc = np.empty_like(gi)          # tanh of the cell state
        cells = np.zeros((batch, frames + 1, hid))  # cells[:, 0] = initial state
        hs = np.zeros((batch, frames + 1, hid))
        for t in range(frames):
            z = xw[:, t] + hs[:, t] @ U.data
            gi[:, t] = _sigmoid_np(z[:, 0 * hid:1 * hid])
            gf[:, t] = _sigmoid_np(z[:, 1 * hid:2 * hid])
            gg[:, t] = np.tanh(z[:, 2 * hid:3 * hid])
            go[:, t] = _sigmoid_np(z[:, 3 * hid:4 * hid])
            cells[:, t + 1] = gf[:, t] * cells[:, t] + gi[:, t] * gg[:, t]
            tc[:, t] = np.tanh(cells[:, t + 1])
            hs[:, t + 1] = go[:, t] * tc[:, t]
        out = hs[:, 1:].copy()

        def vjp(grad_h):
            dW = np.zeros_like(W.data) if W.requires_grad else None
            dU = np.zeros_like(U.data) if U.requires_grad else None
            db = np.zeros_like(b.data) if b.requires_grad else None
            dx = np.zeros_like(xd) if x.requires_grad else None
            dz = np.empty((batch, 4 * hid))
            dh_next = np.zeros((batch, hid))
            dc_next = np.zeros((batch, hid))
            for t in range(frames - 1, -1, -1):
                dh = grad_h[:, t] + dh_next
                dc = dh * go[:, t] * (1.0 - tc[:, t] ** 2) + dc_next
                dz[:, 0 * hid:1 * hid] = dc * gg[:, t] * gi[:, t] * (1.0 - gi[:, t])
                dz[:, 1 * hid:2 * hid] = dc * cells[:, t] * gf[:, t] * (1.0 - gf[:, t])
                dz[:, 2 * hid:3 * hid] = dc * gi[:, t] * (1.0 - gg[:, t] ** 2)
                dz[:, 3 * hid:4 * hid] = dh * tc[:, t] * go[:, t] * (1.0 - go[:, t])
                if dW is not None:
                    dW += xd[:, t].T @ dz
                if dU is not None:
                    dU += hs[:, t].T @ dz
                if db is not None:
                    db += dz.sum(axis=0)
                if dx is not None:
                    dx[:, t] = dz @ W.data.T
                dh_next = dz @ U.data.T
                dc_next = dc * gf[:, t]
            return dx, dW, dU, db

        return Tensor._node(out, (x, W, U, b), vjp, "lstm")

    def params(self) -> list[Parameter]:
        return [self.W, self.U, self.b]

    @staticmethod
    def count_params(n_in: int, hidden: int) -> int:
        return 4 * (hidden * (n_in + hidden) + hidden)


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean negative log-likelihood over frames whose label != ignore_index.

    Ignored frames contribute exactly zero loss and zero gradient.  Accepts
    [T, n_classes] with [T] labels or the batched [B, T, n_classes] form.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    n_classes = logits.shape[-1]
    flat_logits = logits.reshape(-1, n_classes)
    flat_labels = labels.reshape(-1)
    kept = flat_labels != ignore_index
    n_kept = int(kept.sum())
    if n_kept == 0:
        raise EmptyLossError("every frame carries the ignore label")
    if flat_labels[kept].min() < 0 or flat_labels[kept].max() >= n_classes:
        raise ShapeError("label outside [0, n_classes)")

    z = flat_logits.data
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.flatnonzero(kept)
    picked = logp[rows, flat_labels[rows]]
    value = -picked.sum() / n_kept

    def vjp(g):
        grad = np.zeros_like(z)
        probs = np.exp(logp[rows])
        probs[np.arange(rows.size), flat_labels[rows]] -= 1.0
        grad[rows] = probs * (float(g) / n_kept)
        return (grad,)

    out = Tensor._node(np.float64(value), (flat_logits,), vjp, "masked_cross_entropy")
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def adam_step(params: Sequence[Parameter], lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; gradients are consumed and zeroed."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        mhat = p.m / (1.0 - beta1**p.step)
        vhat = p.v / (1.0 - beta2**p.step)
        p.tensor.data = p.tensor.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(module, x: np.ndarray, tolerance: float = 1e-4,
                   h: float = 1e-5, max_entries: int = 6,
                   seed: int = 0) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    ``module`` must be callable on a Tensor and expose ``params()``.  The
    output is reduced to a scalar through a fixed random projection.  Every
    parameter tensor is checked; tensors larger than ``max_entries`` are
    probed at that many seeded random positions (exhaustive differencing of
    full models would take hours for no extra information).

    The error is |analytic - numeric| / max(|analytic|, |numeric|, 1): the
    floor keeps structurally-zero gradients (for example key-projection
    biases, which softmax shift invariance cancels exactly) from turning
    finite-difference dust into spurious relative error.
    """
    rng = np.random.default_rng(seed)
    xt = Tensor(np.asarray(x, dtype=np.float64))
    params = module.params()
    for p in params:
        p.zero_grad()
    out = module(xt)
    proj = rng.standard_normal(out.shape)

    def scalar_loss() -> float:
        with ag.no_grad():
            return float((module(xt).data * proj).sum())

    (out * Tensor(proj)).sum().backward()

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for p in params:
        grad = p.tensor.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        gflat = grad.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = scalar_loss()
            flat[i] = orig - h
            lm = scalar_loss()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[i]), 1.0)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
        report.per_param[p.name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        p.zero_grad()
    return report
