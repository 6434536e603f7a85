"""Generated toy corpora for end-to-end checks.

Two tasks:

* marker task — the label is simply whether a designated marker token
  appears anywhere in the document, so any pathway + encoder pair must
  separate it almost perfectly;
* homograph task — an ambiguous cue token appears in every document and
  the label is decided by which disambiguating token sits immediately
  after it. Each positive document is paired with a negative one holding
  the exact same token multiset (only the trigger/decoy positions are
  swapped), so any order-insensitive model scores the two members of a
  pair identically and AUC pins to 0.5, while context-sensitive token
  vectors separate the task.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .corpus import Document

FILLER_TOKENS = (
    "the", "a", "to", "of", "and", "in", "on", "for", "it", "is",
    "was", "at", "by", "we", "you", "day", "time", "news", "vote", "people",
)
MARKER_TOKEN = "flagword"

CUE_TOKEN = "bass"
TRIGGER_TOKEN = "fishing"
DECOY_TOKEN = "guitar"


def marker_dataset(n: int = 2000, seed: int = 0, min_len: int = 5, max_len: int = 12) -> list[Document]:
    """Balanced corpus where label 1 means the marker token is present."""
    if n < 2 or n % 2 != 0:
        raise ValueError(f"n must be a positive even number, got {n}")
    if not (1 <= min_len <= max_len):
        raise ValueError("need 1 <= min_len <= max_len")
    rng = np.random.default_rng(seed)
    docs = []
    for label in (1, 0):
        for _ in range(n // 2):
            length = int(rng.integers(min_len, max_len + 1))
            tokens = [FILLER_TOKENS[i] for i in rng.integers(0, len(FILLER_TOKENS), length)]
            if label == 1:
                tokens[int(rng.integers(0, length))] = MARKER_TOKEN
            docs.append(Document(tokens=tuple(tokens), label=label))
    order = rng.permutation(len(docs))
    return [docs[i] for i in order]


def homograph_dataset(n_pairs: int = 400, seed: int = 0, min_len: int = 7, max_len: int = 11) -> list[Document]:
    """Paired corpus for the context-sensitivity check.

    Every pair shares one token multiset containing the cue, the trigger,
    and the decoy; in the positive member the trigger directly follows
    the cue, in the negative member the decoy does, and the displaced
    token moves to a non-adjacent slot. Fillers are disjoint from the
    three special tokens.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    if not (4 <= min_len <= max_len):
        raise ValueError("need min_len >= 4 so cue, neighbor, and a non-adjacent slot all fit")
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_pairs):
        length = int(rng.integers(min_len, max_len + 1))
        fillers = [FILLER_TOKENS[i] for i in rng.integers(0, len(FILLER_TOKENS), length)]
        cue_at = int(rng.integers(0, length - 1))  # leave room for the neighbor
        open_slots = [j for j in range(length) if abs(j - cue_at) > 1]
        other_at = int(open_slots[rng.integers(0, len(open_slots))])
        for label, neighbor, displaced in ((1, TRIGGER_TOKEN, DECOY_TOKEN), (0, DECOY_TOKEN, TRIGGER_TOKEN)):
            tokens = list(fillers)
            tokens[cue_at] = CUE_TOKEN
            tokens[cue_at + 1] = neighbor
            tokens[other_at] = displaced
            docs.append(Document(tokens=tuple(tokens), label=label))
    return docs  # pair members stay adjacent; see split_pairs


def split_pairs(docs: list[Document], ratios: tuple[float, float, float] = (0.7, 0.1, 0.2), seed: int = 0):
    """Split a pair-ordered corpus so both members of every pair land in
    the same part. With intact pairs, any scorer that only sees the token
    multiset ties each pair and its evaluation AUC is exactly 0.5."""
    from .corpus import DatasetSplit, split_sizes

    if len(docs) % 2 != 0:
        raise ValueError("pair-ordered corpus must have an even number of documents")
    n_pairs = len(docs) // 2
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_pairs)
    n_train, n_val, _ = split_sizes(n_pairs, ratios)
    parts = []
    for pair_ids in (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]):
        flat = [docs[2 * p + off] for p in pair_ids for off in (0, 1)]
        inner = rng.permutation(len(flat))
        parts.append(tuple(flat[i] for i in inner))
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], seed=seed)


def write_dataset_csv(docs: list[Document], path: str | Path) -> None:
    """Serialize documents as the text,label CSV the loader reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for doc in docs:
            writer.writerow([" ".join(doc.tokens), doc.label])
