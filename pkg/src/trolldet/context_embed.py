"""Contextual embeddings: a toy bidirectional LSTM language model whose
per-layer states become per-token vectors, a learned softmax layer mixer,
and a binary container for ingesting externally precomputed contextual
embeddings (the stand-in for full-scale pretrained models).
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import Document, Vocabulary

log = logging.getLogger(__name__)

CTX_MAGIC = b"CTX1"


class ContextFormatError(ValueError):
    """Raised for malformed precomputed-embedding containers."""


@dataclass
class LstmCellParams:
    """Input/forget/output gates plus candidate update, each with an
    input matrix (H, D), a hidden matrix (H, H), and a bias (H,)."""

    w_i: np.ndarray
    u_i: np.ndarray
    b_i: np.ndarray
    w_f: np.ndarray
    u_f: np.ndarray
    b_f: np.ndarray
    w_o: np.ndarray
    u_o: np.ndarray
    b_o: np.ndarray
    w_g: np.ndarray
    u_g: np.ndarray
    b_g: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return ad.value(self.b_i).shape[0]


@dataclass
class BiLmParams:
    """Token embeddings, one forward and one backward LSTM cell, and a
    shared projection predicting the next (forward) or previous
    (backward) token. Two representation layers: the embedding layer and
    the bi-LSTM layer, each of width 2H (the embedding layer requires
    D == H and duplicates its vector into both halves)."""

    embedding: np.ndarray  # (V, D)
    forward_cell: LstmCellParams
    backward_cell: LstmCellParams
    proj_w: np.ndarray  # (V, H)
    proj_b: np.ndarray  # (V,)

    N_LAYERS = 2

    def __post_init__(self):
        d = ad.value(self.embedding).shape[1]
        h = self.forward_cell.hidden_dim
        if d != h or self.backward_cell.hidden_dim != h:
            raise ValueError(f"bi-LM needs embedding dim == hidden dim in both cells (got D={d}, H={h})")

    @property
    def context_dim(self) -> int:
        return 2 * self.forward_cell.hidden_dim


@dataclass(frozen=True)
class ContextualLayers:
    """L x T x D_ctx per-layer, per-token vectors; rows at or beyond
    ``valid_length`` are zero in every layer."""

    layers: np.ndarray
    valid_length: int

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def context_dim(self) -> int:
        return self.layers.shape[2]


@dataclass
class LayerMixWeights:
    """Softmax-normalized per-layer weights plus a global scale."""

    s_raw: np.ndarray  # (L,)
    gamma: np.ndarray  # scalar, stored 0-d so it can be trained

    @classmethod
    def uniform(cls, n_layers: int) -> "LayerMixWeights":
        return cls(s_raw=np.zeros(n_layers), gamma=np.asarray(1.0))


def init_lstm(d_in: int, hidden: int, rng: np.random.Generator) -> LstmCellParams:
    def w():
        return rng.normal(0.0, 1.0 / math.sqrt(d_in), (hidden, d_in))

    def u():
        return rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden))

    zeros = lambda: np.zeros(hidden)  # noqa: E731
    return LstmCellParams(
        w_i=w(), u_i=u(), b_i=zeros(),
        w_f=w(), u_f=u(), b_f=zeros(),
        w_o=w(), u_o=u(), b_o=zeros(),
        w_g=w(), u_g=u(), b_g=zeros(),
    )


def init_bilm(vocab_size: int, dim: int, rng: np.random.Generator) -> BiLmParams:
    return BiLmParams(
        embedding=rng.normal(0.0, 0.1, (vocab_size, dim)),
        forward_cell=init_lstm(dim, dim, rng),
        backward_cell=init_lstm(dim, dim, rng),
        proj_w=rng.normal(0.0, 1.0 / math.sqrt(dim), (vocab_size, dim)),
        proj_b=np.zeros(vocab_size),
    )


def lstm_step(cell: LstmCellParams, x, h, c):
    """One LSTM transition.

    i = sigmoid(W_i x + U_i h + b_i)    input gate
    f = sigmoid(W_f x + U_f h + b_f)    forget gate
    o = sigmoid(W_o x + U_o h + b_o)    output gate
    g = tanh(W_g x + U_g h + b_g)       candidate update
    c' = f * c + i * g
    h' = o * tanh(c')
    """
    i = ad.sigmoid(ad.matmul(cell.w_i, x) + ad.matmul(cell.u_i, h) + cell.b_i)
    f = ad.sigmoid(ad.matmul(cell.w_f, x) + ad.matmul(cell.u_f, h) + cell.b_f)
    o = ad.sigmoid(ad.matmul(cell.w_o, x) + ad.matmul(cell.u_o, h) + cell.b_o)
    g = ad.tanh(ad.matmul(cell.w_g, x) + ad.matmul(cell.u_g, h) + cell.b_g)
    c_next = ad.mul(f, c) + ad.mul(i, g)
    return ad.mul(o, ad.tanh(c_next)), c_next


def _bilm_states(params: BiLmParams, ids: np.ndarray, valid_length: int):
    """Embedded inputs plus forward (left-to-right) and backward
    (right-to-left) hidden-state lists over the valid prefix."""
    h_dim = params.forward_cell.hidden_dim
    embedded = [ad.take_rows(params.embedding, np.asarray([ids[t]], dtype=np.intp))[0] for t in range(valid_length)]
    fwd, bwd = [], [None] * valid_length
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(valid_length):
        h, c = lstm_step(params.forward_cell, embedded[t], h, c)
        fwd.append(h)
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(valid_length - 1, -1, -1):
        h, c = lstm_step(params.backward_cell, embedded[t], h, c)
        bwd[t] = h
    return embedded, fwd, bwd


def run_bilm(params: BiLmParams, ids: np.ndarray, valid_length: int) -> ContextualLayers:
    """Per-token layer stack: layer 0 duplicates the token embedding into
    both halves; layer 1 concatenates the forward and backward LSTM
    states. PAD positions stay zero.

    With traced parameters the returned layers stay on the tape, so
    language-model gradients flow through this function.
    """
    ids = np.asarray(ids, dtype=np.intp)
    v = ad.value(params.embedding).shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"token id out of range for bi-LM vocabulary of {v}")
    t_total = len(ids)
    d_ctx = params.context_dim
    if valid_length == 0:
        return ContextualLayers(layers=np.zeros((2, t_total, d_ctx)), valid_length=0)
    embedded, fwd, bwd = _bilm_states(params, ids, valid_length)
    layer0 = ad.stack([ad.concat([e, e], axis=0) for e in embedded], axis=0)
    layer1 = ad.stack([ad.concat([f, b], axis=0) for f, b in zip(fwd, bwd)], axis=0)
    if valid_length < t_total:
        pad = np.zeros((t_total - valid_length, d_ctx))
        layer0 = ad.concat([layer0, pad], axis=0)
        layer1 = ad.concat([layer1, pad], axis=0)
    return ContextualLayers(layers=ad.stack([layer0, layer1], axis=0), valid_length=valid_length)


@dataclass(frozen=True)
class BiLmTrainConfig:
    dim: int = 16
    learning_rate: float = 0.1
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("dim, learning_rate, and batch_size must be positive; epochs >= 0")


def _doc_lm_loss(params: BiLmParams, ids: np.ndarray, valid_length: int):
    """Summed forward next-token and backward previous-token cross
    entropy over one document, plus the number of predictions made."""
    if valid_length < 2:
        return 0.0, 0
    _, fwd, bwd = _bilm_states(params, ids, valid_length)
    terms = []
    for t in range(valid_length - 1):  # predict ids[t + 1] from the forward state
        logits = ad.matmul(params.proj_w, fwd[t]) + params.proj_b
        terms.append(ad.logsumexp(logits, axis=-1) - logits[int(ids[t + 1])])
    for t in range(1, valid_length):  # predict ids[t - 1] from the backward state
        logits = ad.matmul(params.proj_w, bwd[t]) + params.proj_b
        terms.append(ad.logsumexp(logits, axis=-1) - logits[int(ids[t - 1])])
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total, len(terms)


def corpus_perplexity(params: BiLmParams, encoded: list) -> float:
    """exp(mean per-prediction cross entropy) over encoded documents."""
    total, count = 0.0, 0
    for doc in encoded:
        loss, n = _doc_lm_loss(params, doc.ids, doc.valid_length)
        total += float(ad.value(loss))
        count += n
    if count == 0:
        raise ValueError("no language-model predictions possible (all documents have < 2 valid tokens)")
    return math.exp(total / count)


def train_bilm(
    docs: list[Document] | tuple[Document, ...],
    vocab: Vocabulary,
    config: BiLmTrainConfig,
    max_len: int = 32,
) -> tuple[BiLmParams, dict]:
    """Minimize the coupled forward/backward cross entropy by seeded
    mini-batch gradient descent. Returns the trained parameters and a
    metadata dict with before/after perplexity."""
    from .corpus import encode_all  # local import to avoid cycle at module load
    from .train import collect_arrays, rebind_arrays

    if not docs:
        raise ValueError("cannot train a language model on an empty corpus")
    encoded = encode_all(list(docs), vocab, max_len)
    rng = np.random.default_rng(config.seed)
    params = init_bilm(len(vocab), config.dim, rng)
    metadata = {"initial_perplexity": corpus_perplexity(params, encoded)}

    usable = [doc for doc in encoded if doc.valid_length >= 2]
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        for start in range(0, len(usable), config.batch_size):
            batch = [usable[i] for i in order[start : start + config.batch_size]]
            named = collect_arrays(params)
            leaves = {name: ad.Var(arr) for name, arr in named.items()}
            traced = rebind_arrays(params, leaves)
            total, count = None, 0
            for doc in batch:
                loss, n = _doc_lm_loss(traced, doc.ids, doc.valid_length)
                total = loss if total is None else total + loss
                count += n
            mean_loss = total * (1.0 / count)
            if not math.isfinite(float(mean_loss.data)):
                raise ValueError(f"non-finite language-model loss at epoch {epoch}")
            mean_loss.backward()
            for name, leaf in leaves.items():
                if leaf.grad is not None:
                    named[name] = named[name] - config.learning_rate * leaf.grad
            params = rebind_arrays(params, named)

    metadata["final_perplexity"] = corpus_perplexity(params, encoded)
    log.info(
        "bi-LM training: perplexity %.3f -> %.3f over %d epochs",
        metadata["initial_perplexity"], metadata["final_perplexity"], config.epochs,
    )
    return params, metadata


def mix_layers(layers: ContextualLayers | np.ndarray, weights: LayerMixWeights):
    """gamma * sum_l softmax(s_raw)_l * layers[l], per token position."""
    stack = layers.layers if isinstance(layers, ContextualLayers) else layers
    n_layers = ad.value(stack).shape[0]
    if ad.value(weights.s_raw).shape[0] != n_layers:
        raise ValueError(f"{ad.value(weights.s_raw).shape[0]} mix weights for {n_layers} layers")
    norm = ad.softmax(weights.s_raw, axis=-1)
    mixed = ad.sum(ad.mul(ad.reshape(norm, (n_layers, 1, 1)), stack), axis=0)
    return ad.mul(weights.gamma, mixed)


# precomputed-embedding container ----------------------------------------
#
# binary layout: magic "CTX1", then little-endian u32 n_docs, L, D_ctx,
# then per document a u32 T followed by L*T*D_ctx little-endian float32.

def save_precomputed(path: str | Path, docs_layers: list[ContextualLayers]) -> None:
    if not docs_layers:
        raise ContextFormatError("refusing to write an empty container")
    n_layers = docs_layers[0].n_layers
    d_ctx = docs_layers[0].context_dim
    for i, ctx in enumerate(docs_layers):
        if ctx.n_layers != n_layers or ctx.context_dim != d_ctx:
            raise ContextFormatError(f"document {i} has shape {ctx.layers.shape}, expected L={n_layers}, D={d_ctx}")
    with Path(path).open("wb") as fh:
        fh.write(CTX_MAGIC)
        fh.write(struct.pack("<III", len(docs_layers), n_layers, d_ctx))
        for ctx in docs_layers:
            trimmed = ad.value(ctx.layers)[:, : ctx.valid_length, :]
            fh.write(struct.pack("<I", ctx.valid_length))
            fh.write(trimmed.astype("<f4").tobytes())


def load_precomputed(path: str | Path) -> list[ContextualLayers]:
    """Read one ContextualLayers per document; T in the container is the
    valid length (PAD rows are never stored)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CTX_MAGIC:
        raise ContextFormatError(f"{path}: not a CTX1 container")
    n_docs, n_layers, d_ctx = struct.unpack_from("<III", raw, 4)
    offset = 16
    docs = []
    for i in range(n_docs):
        if offset + 4 > len(raw):
            raise ContextFormatError(f"{path}: truncated at document {i} header (have {len(raw)} bytes)")
        (t,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        n_bytes = 4 * n_layers * t * d_ctx
        if offset + n_bytes > len(raw):
            raise ContextFormatError(
                f"{path}: truncated in document {i}: expected {n_bytes} payload bytes, found {len(raw) - offset}"
            )
        values = np.frombuffer(raw, dtype="<f4", count=n_layers * t * d_ctx, offset=offset)
        offset += n_bytes
        docs.append(ContextualLayers(layers=values.reshape(n_layers, t, d_ctx).astype(np.float64), valid_length=t))
    if offset != len(raw):
        raise ContextFormatError(f"{path}: {len(raw) - offset} trailing bytes after {n_docs} documents")
    return docs


def pad_contextual(ctx: ContextualLayers, t_total: int) -> ContextualLayers:
    """Zero-pad the time axis out to ``t_total`` rows (truncating the
    valid region if it is longer)."""
    n_layers, t, d_ctx = ctx.layers.shape
    out = np.zeros((n_layers, t_total, d_ctx))
    keep = min(t, t_total, ctx.valid_length)
    out[:, :keep, :] = ctx.layers[:, :keep, :]
    return ContextualLayers(layers=out, valid_length=keep)
