"""Vocabulary construction, word-vector loading, and index encoding.

The embedding table is a dense V x k float32 matrix with two reserved rows:
PAD (index 0, all zeros, never trained) and UNK (index 1).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import DatasetError, LabeledCorpus

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

STATIC = "static"
NON_STATIC = "non_static"


@dataclass
class Vocab:
    """Bijection between corpus words and indices >= 2; 0/1 are PAD/UNK."""

    word_to_index: dict[str, int]
    index_to_word: list[str]

    def __len__(self) -> int:
        return len(self.index_to_word)

    def index_of(self, word: str) -> int:
        return self.word_to_index.get(word, UNK_INDEX)

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "Vocab":
        index_to_word = [PAD_TOKEN, UNK_TOKEN, *words]
        word_to_index = {w: i for i, w in enumerate(index_to_word)}
        if len(word_to_index) != len(index_to_word):
            raise DatasetError("vocabulary words are not unique")
        return cls(word_to_index=word_to_index, index_to_word=index_to_word)


def build_vocab(corpora: Sequence[LabeledCorpus], min_count: int = 1) -> Vocab:
    """Index every token with frequency >= min_count, by descending frequency
    then lexicographic order."""
    if not corpora:
        raise DatasetError("build_vocab needs at least one corpus")
    freq: Counter = Counter()
    for corpus in corpora:
        for rec in corpus.records:
            freq.update(rec.tokens)
    words = sorted(
        (w for w, c in freq.items() if c >= min_count),
        key=lambda w: (-freq[w], w),
    )
    return Vocab.from_words(words)


@dataclass
class EmbeddingMatrix:
    """Dense word-vector table; mode decides whether training updates it."""

    vectors: np.ndarray
    dim: int
    mode: str = STATIC

    def __post_init__(self) -> None:
        if self.mode not in (STATIC, NON_STATIC):
            raise ValueError(f"unknown embedding mode '{self.mode}'")
        if self.vectors.shape[1] != self.dim:
            raise ValueError("vector width does not match declared dimension")

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(vectors=self.vectors.copy(), dim=self.dim, mode=self.mode)


def random_init(
    vocab: Vocab, dim: int, seed: int, mode: str = NON_STATIC, dtype=np.float32
) -> EmbeddingMatrix:
    """All non-PAD rows uniform in [-0.25, 0.25]; PAD row zero; seeded."""
    if dim < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.25, 0.25, size=(len(vocab), dim)).astype(dtype)
    vectors[PAD_INDEX] = 0.0
    return EmbeddingMatrix(vectors=vectors, dim=dim, mode=mode)


def load_vec_file(
    path: str | Path,
    vocab: Vocab,
    dim: int,
    seed: int,
    mode: str = STATIC,
    dtype=np.float32,
) -> EmbeddingMatrix:
    """Load a fastText-style .vec text file into the vocabulary's row order.

    Vocabulary words absent from the file (UNK included) get uniform
    [-0.25, 0.25] rows from the run seed; the PAD row is zeroed.
    """
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.25, 0.25, size=(len(vocab), dim)).astype(dtype)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DatasetError(f"{path}:1: expected header 'V D'")
        file_dim = int(header[1])
        if file_dim != dim:
            raise DatasetError(
                f"{path}: file dimension {file_dim} does not match requested {dim}"
            )
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DatasetError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            index = vocab.word_to_index.get(word)
            if index is None or index == PAD_INDEX:
                continue
            try:
                vectors[index] = np.asarray([float(v) for v in values], dtype=dtype)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed vector value") from None
    vectors[PAD_INDEX] = 0.0
    return EmbeddingMatrix(vectors=vectors, dim=dim, mode=mode)


def encode(tokens: Sequence[str], vocab: Vocab, max_len: int) -> tuple[np.ndarray, int]:
    """Map tokens to indices (UNK for unknowns), truncate/pad to max_len.

    Returns (ids, n) where n is the effective (pre-padding) length.
    """
    n = min(len(tokens), max_len)
    ids = np.full(max_len, PAD_INDEX, dtype=np.int32)
    for i in range(n):
        ids[i] = vocab.index_of(tokens[i])
    return ids, n
