"""Sequence encoders: CNN with global pooling, GRU, and a transformer
encoder stack. Each maps a T x D sequence of token vectors plus its valid
length to one fixed-dimension feature vector.

All forward math goes through :mod:`trolldet.autodiff`, so the same code
serves inference on ndarrays and gradient computation on tape Vars. Only
the first ``valid_length`` positions ever influence an output, which
makes padding invariance structural rather than approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LAYER_NORM_EPS = 1e-5


@dataclass
class CnnFilterBank:
    width: int
    kernel: np.ndarray  # (channels, width, d_in)
    bias: np.ndarray  # (channels,)


@dataclass
class CnnEncoderParams:
    banks: list[CnnFilterBank]
    pooling: str = "global-max"  # or "global-average"

    def __post_init__(self):
        if self.pooling not in ("global-max", "global-average"):
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        for bank in self.banks:
            if bank.width < 1:
                raise ValueError("filter width must be >= 1")

    @property
    def output_dim(self) -> int:
        return sum(ad.value(b.kernel).shape[0] for b in self.banks)


@dataclass
class GruCellParams:
    w_z: np.ndarray  # (H, D) input weights, update gate
    u_z: np.ndarray  # (H, H) hidden weights, update gate
    b_z: np.ndarray  # (H,)
    w_r: np.ndarray  # reset gate
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray  # candidate state
    u_h: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return ad.value(self.b_z).shape[0]

    @property
    def output_dim(self) -> int:
        return self.hidden_dim


@dataclass
class TransformerLayerParams:
    w_q: np.ndarray  # (d_model, d_model)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_ff1: np.ndarray  # (d_model, d_ff)
    b_ff1: np.ndarray
    w_ff2: np.ndarray  # (d_ff, d_model)
    b_ff2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class TransformerEncoderParams:
    n_heads: int
    d_model: int
    layers: list[TransformerLayerParams]
    positional: np.ndarray  # (max_len, d_model), learned
    input_proj: np.ndarray | None = None  # (d_in, d_model) when d_in != d_model

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def output_dim(self) -> int:
        return self.d_model


# initializers ----------------------------------------------------------

def init_cnn(d_in: int, widths: list[int], channels: int, pooling: str, rng: np.random.Generator) -> CnnEncoderParams:
    banks = [
        CnnFilterBank(
            width=k,
            kernel=rng.normal(0.0, 1.0 / math.sqrt(k * d_in), (channels, k, d_in)),
            bias=np.zeros(channels),
        )
        for k in widths
    ]
    return CnnEncoderParams(banks=banks, pooling=pooling)


def init_gru(d_in: int, hidden: int, rng: np.random.Generator) -> GruCellParams:
    def w():
        return rng.normal(0.0, 1.0 / math.sqrt(d_in), (hidden, d_in))

    def u():
        return rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden))

    zeros = lambda: np.zeros(hidden)  # noqa: E731
    return GruCellParams(w_z=w(), u_z=u(), b_z=zeros(), w_r=w(), u_r=u(), b_r=zeros(), w_h=w(), u_h=u(), b_h=zeros())


def init_transformer(
    d_in: int,
    d_model: int,
    n_layers: int,
    n_heads: int,
    d_ff: int,
    max_len: int,
    rng: np.random.Generator,
) -> TransformerEncoderParams:
    def proj():
        return rng.normal(0.0, 1.0 / math.sqrt(d_model), (d_model, d_model))

    layers = [
        TransformerLayerParams(
            w_q=proj(),
            w_k=proj(),
            w_v=proj(),
            w_o=proj(),
            w_ff1=rng.normal(0.0, 1.0 / math.sqrt(d_model), (d_model, d_ff)),
            b_ff1=np.zeros(d_ff),
            w_ff2=rng.normal(0.0, 1.0 / math.sqrt(d_ff), (d_ff, d_model)),
            b_ff2=np.zeros(d_model),
            ln1_gain=np.ones(d_model),
            ln1_bias=np.zeros(d_model),
            ln2_gain=np.ones(d_model),
            ln2_bias=np.zeros(d_model),
        )
        for _ in range(n_layers)
    ]
    input_proj = None if d_in == d_model else rng.normal(0.0, 1.0 / math.sqrt(d_in), (d_in, d_model))
    return TransformerEncoderParams(
        n_heads=n_heads,
        d_model=d_model,
        layers=layers,
        positional=rng.normal(0.0, 0.02, (max_len, d_model)),
        input_proj=input_proj,
    )


# forward operations ----------------------------------------------------

def cnn_encode(params: CnnEncoderParams, seq, valid_length: int):
    """Convolve each filter bank over the valid windows, apply ReLU, pool
    per channel (max or average by mode), concatenate bank outputs.

    A bank wider than the valid prefix is clamped: only its first
    ``valid_length`` taps are applied, giving one window.
    """
    if valid_length < 1:
        raise ValueError("cnn_encode requires valid_length >= 1")
    pooled = []
    for bank in params.banks:
        k_eff = min(bank.width, valid_length)
        kernel = bank.kernel if k_eff == bank.width else bank.kernel[:, :k_eff, :]
        n_channels = ad.value(kernel).shape[0]
        n_win = valid_length - k_eff + 1
        windows = ad.stack([seq[w : w + k_eff] for w in range(n_win)], axis=0)  # (n_win, k_eff, d)
        flat = ad.reshape(windows, (n_win, -1))
        weights = ad.transpose(ad.reshape(kernel, (n_channels, -1)))
        activated = ad.relu(ad.matmul(flat, weights) + bank.bias)  # (n_win, channels)
        if params.pooling == "global-max":
            pooled.append(ad.amax(activated, axis=0))
        else:
            pooled.append(ad.mean(activated, axis=0))
    return pooled[0] if len(pooled) == 1 else ad.concat(pooled, axis=0)


def gru_step(cell: GruCellParams, x, h):
    """One GRU transition.

    z = sigmoid(W_z x + U_z h + b_z)        update gate
    r = sigmoid(W_r x + U_r h + b_r)        reset gate
    htilde = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * htilde
    """
    z = ad.sigmoid(ad.matmul(cell.w_z, x) + ad.matmul(cell.u_z, h) + cell.b_z)
    r = ad.sigmoid(ad.matmul(cell.w_r, x) + ad.matmul(cell.u_r, h) + cell.b_r)
    htilde = ad.tanh(ad.matmul(cell.w_h, x) + ad.matmul(cell.u_h, ad.mul(r, h)) + cell.b_h)
    return (1.0 - z) * h + z * htilde


def gru_encode(cell: GruCellParams, seq, valid_length: int):
    """Fold :func:`gru_step` over the valid positions from h_0 = 0 and
    return the final hidden state."""
    if valid_length < 1:
        raise ValueError("gru_encode requires valid_length >= 1")
    h = np.zeros(cell.hidden_dim)
    for t in range(valid_length):
        h = gru_step(cell, seq[t], h)
    return h


def attention(q, k, v, n_valid: int):
    """Scaled dot-product attention over the first ``n_valid`` key/value
    positions: softmax(Q K^T / sqrt(d_k)) V with padded columns masked to
    zero weight."""
    t = ad.value(q).shape[0]
    if not 1 <= n_valid <= t:
        raise ValueError(f"n_valid must be in 1..{t}, got {n_valid}")
    d_k = ad.value(k).shape[1]
    scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(d_k))
    mask = np.zeros((1, t))
    mask[0, :n_valid] = 1.0
    weights = ad.masked_softmax(scores, mask)
    return ad.matmul(weights, v)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS):
    """Standardize the last axis with population variance, then apply the
    learned affine transform."""
    m = ad.mean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, m)
    var = ad.mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    return ad.add(ad.mul(gain, ad.div(centered, ad.power(ad.add(var, eps), 0.5))), bias)


def _multi_head_attention(layer: TransformerLayerParams, x, n_heads: int, d_model: int):
    q = ad.matmul(x, layer.w_q)
    k = ad.matmul(x, layer.w_k)
    v = ad.matmul(x, layer.w_v)
    d_head = d_model // n_heads
    t = ad.value(q).shape[0]
    heads = []
    for i in range(n_heads):
        cols = slice(i * d_head, (i + 1) * d_head)
        heads.append(attention(q[:, cols], k[:, cols], v[:, cols], n_valid=t))
    merged = heads[0] if n_heads == 1 else ad.concat(heads, axis=1)
    return ad.matmul(merged, layer.w_o)


def transformer_encode(params: TransformerEncoderParams, seq, valid_length: int):
    """Project the valid prefix to d_model, add learned positional rows,
    run the post-norm encoder stack, mean-pool over valid positions.

    Operating on the valid prefix only is equivalent to masking PAD in
    attention and excluding PAD from the pool, and makes padding
    invariance exact.
    """
    if valid_length < 1:
        raise ValueError("transformer_encode requires valid_length >= 1")
    if valid_length > ad.value(params.positional).shape[0]:
        raise ValueError(
            f"sequence of {valid_length} valid positions exceeds positional table of {ad.value(params.positional).shape[0]}"
        )
    x = seq[:valid_length]
    if params.input_proj is not None:
        x = ad.matmul(x, params.input_proj)
    x = ad.add(x, params.positional[:valid_length])
    for layer in params.layers:
        attended = _multi_head_attention(layer, x, params.n_heads, params.d_model)
        x = layer_norm(ad.add(x, attended), layer.ln1_gain, layer.ln1_bias)
        ff = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(x, layer.w_ff1), layer.b_ff1)), layer.w_ff2), layer.b_ff2)
        x = layer_norm(ad.add(x, ff), layer.ln2_gain, layer.ln2_bias)
    return ad.mean(x, axis=0)
