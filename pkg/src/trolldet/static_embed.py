"""Static word embeddings: pretrained-vector file IO, distance-weighted
co-occurrence counting, and a desk-scale trainer that factorizes the
count matrix by weighted least squares.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import PAD_ID, UNK_ID, Document, Vocabulary

log = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    """Raised for malformed vector files or invalid training setups."""


@dataclass
class EmbeddingTable:
    """V x D matrix of token vectors aligned to a Vocabulary.

    Row 0 (PAD) is always the zero vector. ``provenance`` records whether
    the rows were loaded from a file or trained here.
    """

    dim: int
    matrix: np.ndarray
    provenance: str  # "loaded" | "trained"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        matrix = ad.value(self.matrix)
        if matrix.shape[1] != self.dim:
            raise EmbeddingError(f"matrix has {matrix.shape[1]} columns, expected {self.dim}")
        if not np.all(np.isfinite(matrix)):
            raise EmbeddingError("embedding table contains non-finite entries")


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """Sparse accumulated counts N(word, context) over a sliding window."""

    counts: dict[tuple[int, int], float]
    window: int
    weighting: str  # "inverse-distance" | "uniform"

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class GloveTrainConfig:
    dim: int = 16
    window: int = 4
    x_max: float = 100.0
    alpha: float = 0.75
    learning_rate: float = 0.05
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.epochs < 1:
            raise ValueError("dim, window, and epochs must all be >= 1")
        if self.x_max <= 0 or not (0.0 < self.alpha <= 1.0) or self.learning_rate <= 0:
            raise ValueError("x_max and learning_rate must be positive, alpha in (0, 1]")


def load_embedding_text(path: str | Path, expected_dim: int, vocab: Vocabulary) -> EmbeddingTable:
    """Fill rows for vocabulary tokens found in a whitespace-separated
    text file (token followed by ``expected_dim`` reals per line).

    Tokens absent from the file keep the zero vector; the PAD row is
    forced to zero. Hit/miss counts land in ``metadata``.
    """
    path = Path(path)
    matrix = np.zeros((len(vocab), expected_dim), dtype=np.float64)
    hit_ids = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, fields = parts[0], parts[1:]
            if len(fields) != expected_dim:
                raise EmbeddingError(f"{path}:{line_no}: expected {expected_dim} values, got {len(fields)}")
            idx = vocab.token_to_id.get(token)
            if idx is None or idx == PAD_ID:
                continue
            try:
                matrix[idx] = [float(f) for f in fields]
            except ValueError as err:
                raise EmbeddingError(f"{path}:{line_no}: unparseable number ({err})") from None
            hit_ids.add(idx)
    matrix[PAD_ID] = 0.0
    misses = len(vocab) - 2 - len(hit_ids - {UNK_ID})
    log.info("loaded vectors for %d/%d vocabulary tokens from %s", len(hit_ids), len(vocab) - 2, path)
    return EmbeddingTable(
        dim=expected_dim,
        matrix=matrix,
        provenance="loaded",
        metadata={"hits": len(hit_ids), "misses": misses, "source": str(path)},
    )


def write_embedding_text(table: EmbeddingTable, vocab: Vocabulary, path: str | Path) -> None:
    """Inverse of :func:`load_embedding_text` for non-reserved tokens."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for idx in range(2, len(vocab)):
            values = " ".join(f"{v:.8f}" for v in table.matrix[idx])
            fh.write(f"{vocab.id_to_token[idx]} {values}\n")


def build_cooccurrence(
    docs: list[Document] | tuple[Document, ...],
    vocab: Vocabulary,
    window: int,
    weighting: str = "inverse-distance",
) -> CooccurrenceMatrix:
    """Accumulate N(center, context) over every position pair within
    ``window``, weighted 1/distance (or 1 in uniform mode). Positions
    whose token is out of vocabulary are skipped entirely; distances are
    still measured on raw positions.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if weighting not in ("inverse-distance", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    counts: dict[tuple[int, int], float] = {}
    for doc in docs:
        ids = [vocab.token_to_id.get(tok, UNK_ID) for tok in doc.tokens]
        for i, center in enumerate(ids):
            if center in (PAD_ID, UNK_ID):
                continue
            for j in range(max(0, i - window), min(len(ids), i + window + 1)):
                if j == i:
                    continue
                context = ids[j]
                if context in (PAD_ID, UNK_ID):
                    continue
                weight = 1.0 if weighting == "uniform" else 1.0 / abs(i - j)
                key = (center, context)
                counts[key] = counts.get(key, 0.0) + weight
    return CooccurrenceMatrix(counts=counts, window=window, weighting=weighting)


def glove_weight(x: np.ndarray | float, x_max: float, alpha: float):
    """Count-weighting f(x) = min(1, (x / x_max)^alpha)."""
    return np.minimum(1.0, (np.asarray(x, dtype=np.float64) / x_max) ** alpha)


def glove_loss(params: dict, w_ids: np.ndarray, c_ids: np.ndarray, f_weights: np.ndarray, log_counts: np.ndarray):
    """Weighted squared reconstruction error of log counts:
    sum f(N) * (u_w . v_c + b_w + b_c - log N)^2."""
    u = ad.take_rows(params["word_vecs"], w_ids)
    v = ad.take_rows(params["context_vecs"], c_ids)
    b_w = ad.take_rows(params["word_bias"], w_ids)
    b_c = ad.take_rows(params["context_bias"], c_ids)
    err = ad.sum(ad.mul(u, v), axis=1) + b_w + b_c - log_counts
    return ad.sum(ad.mul(f_weights, ad.mul(err, err)))


def train_glove(cooc: CooccurrenceMatrix, config: GloveTrainConfig, vocab_size: int | None = None) -> EmbeddingTable:
    """Factorize the co-occurrence matrix by full-batch gradient descent.

    Final vector for a token is the sum of its word and context vectors.
    Returns the initial/final loss in ``metadata``.
    """
    if not cooc.counts:
        raise EmbeddingError("cannot train on an empty co-occurrence matrix")
    entries = sorted(cooc.counts.items())
    w_ids = np.array([w for (w, _), _ in entries], dtype=np.intp)
    c_ids = np.array([c for (_, c), _ in entries], dtype=np.intp)
    raw = np.array([n for _, n in entries], dtype=np.float64)
    f_weights = glove_weight(raw, config.x_max, config.alpha)
    log_counts = np.log(raw)

    v_size = vocab_size if vocab_size is not None else int(max(w_ids.max(), c_ids.max())) + 1
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    params = {
        "word_vecs": rng.uniform(-bound, bound, (v_size, config.dim)),
        "context_vecs": rng.uniform(-bound, bound, (v_size, config.dim)),
        "word_bias": rng.uniform(-bound, bound, v_size),
        "context_bias": rng.uniform(-bound, bound, v_size),
    }

    history = []
    for epoch in range(config.epochs):
        leaves = {name: ad.Var(arr) for name, arr in params.items()}
        loss = glove_loss(leaves, w_ids, c_ids, f_weights, log_counts)
        history.append(float(loss.data))
        if not math.isfinite(history[-1]):
            raise EmbeddingError(f"non-finite loss at epoch {epoch}; lower the learning rate")
        loss.backward()
        for name, leaf in leaves.items():
            params[name] = params[name] - config.learning_rate * leaf.grad
    history.append(float(glove_loss(params, w_ids, c_ids, f_weights, log_counts)))
    if not math.isfinite(history[-1]):
        raise EmbeddingError("non-finite loss after final update; lower the learning rate")

    matrix = params["word_vecs"] + params["context_vecs"]
    matrix[PAD_ID] = 0.0
    log.info("glove training: loss %.4f -> %.4f over %d epochs", history[0], history[-1], config.epochs)
    return EmbeddingTable(
        dim=config.dim,
        matrix=matrix,
        provenance="trained",
        metadata={"initial_loss": history[0], "final_loss": history[-1], "loss_history": history, "epochs": config.epochs},
    )


def embed_sequence(table: EmbeddingTable | np.ndarray, ids: np.ndarray, valid_length: int):
    """Look up one table row per id; positions at or beyond
    ``valid_length`` are zero rows.

    ``table`` may be an EmbeddingTable or a raw (possibly traced) matrix,
    so the lookup is differentiable when the table is trainable.
    """
    matrix = table.matrix if isinstance(table, EmbeddingTable) else table
    n_rows, dim = ad.value(matrix).shape
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"token id out of range for table with {n_rows} rows")
    if valid_length == len(ids):
        return ad.take_rows(matrix, ids)
    pad = np.zeros((len(ids) - valid_length, dim))
    if valid_length == 0:
        return pad
    return ad.concat([ad.take_rows(matrix, ids[:valid_length]), pad], axis=0)
