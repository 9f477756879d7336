"""Word-embedding table and sentence encoder.

Sentences are encoded as fixed-length matrices whose rows are a word vector
followed by two scalar features: a first-character case flag and an entity
role flag.  Both flags use the boost constant ``v``, the ceiling of the
largest value stored in the table, so they sit at the edge of the range the
word vectors occupy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

Span = tuple[int, int]

DEFAULT_SEQ_LEN = 100


class MalformedEmbeddingError(ValueError):
    """Raised when an embedding file cannot be parsed."""


class EmbeddingStore:
    """Immutable word -> vector table.

    Keys are stored lowercase; every lookup lowercases the query.  The
    first occurrence of a duplicated word wins.
    """

    def __init__(self, words: Sequence[str], vectors: np.ndarray):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError("vectors must be a (len(words), d) matrix")
        if len(words) == 0:
            raise ValueError("embedding table is empty")

        index: dict[str, int] = {}
        keep = []
        for row, word in enumerate(words):
            key = word.lower()
            if key in index:
                continue
            index[key] = len(keep)
            keep.append(row)
        matrix = vectors[keep]
        matrix.setflags(write=False)

        self._matrix = matrix
        self._index = MappingProxyType(index)
        self._chars = MappingProxyType(
            {k: i for k, i in index.items() if len(k) == 1})
        self._v = float(math.ceil(matrix.max()))
        self._zero = np.zeros(matrix.shape[1])
        self._zero.setflags(write=False)

    @property
    def d(self) -> int:
        return self._matrix.shape[1]

    @property
    def v(self) -> float:
        """Boost constant: ceiling of the global maximum entry."""
        return self._v

    @property
    def size(self) -> int:
        return self._matrix.shape[0]

    @property
    def vocab(self) -> Mapping[str, int]:
        return self._index

    @property
    def char_table(self) -> Mapping[str, int]:
        return self._chars

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._index

    def __len__(self) -> int:
        return self.size

    def vector(self, word: str) -> np.ndarray:
        return self._matrix[self._index[word.lower()]]

    def fingerprint(self) -> dict:
        return {"d": self.d, "vocab_size": self.size, "v": self.v}


def load_embeddings(source: TextIO | Iterable[str]) -> EmbeddingStore:
    """Read a GloVe-style text table (``word x1 x2 ... xd`` per line)."""
    words: list[str] = []
    rows: list[list[float]] = []
    d = None
    for lineno, line in enumerate(source, start=1):
        parts = line.rstrip("\n").rstrip("\r").split(" ")
        if len(parts) == 1 and not parts[0].strip():
            continue
        word, values = parts[0], parts[1:]
        if d is None:
            d = len(values)
            if d == 0:
                raise MalformedEmbeddingError(f"line {lineno}: no vector values")
        if len(values) != d:
            raise MalformedEmbeddingError(
                f"line {lineno}: expected {d} values, found {len(values)}")
        try:
            rows.append([float(x) for x in values])
        except ValueError as exc:
            raise MalformedEmbeddingError(f"line {lineno}: {exc}") from None
        words.append(word)
    if not words:
        raise MalformedEmbeddingError("embedding source is empty")
    return EmbeddingStore(words, np.array(rows))


def load_embeddings_file(path) -> EmbeddingStore:
    with open(path, encoding="utf-8") as fh:
        return load_embeddings(fh)


def case_feature(word: str, store: EmbeddingStore) -> float:
    if not word:
        raise ValueError("empty token")
    return store.v if word[0].isupper() else -store.v


def entity_feature(index: int, subjects: Iterable[Span], objects: Iterable[Span],
                   store: EmbeddingStore) -> float:
    # subject wins when a token is in both roles
    if any(s <= index < e for s, e in subjects):
        return store.v
    if any(s <= index < e for s, e in objects):
        return -store.v
    return 0.0


def lookup(word: str, store: EmbeddingStore) -> np.ndarray:
    """Vector for ``word``; OOV words get the mean of their known characters."""
    key = word.lower()
    row = store.vocab.get(key)
    if row is not None:
        return store.matrix[row]
    hits = [store.char_table[ch] for ch in key if ch in store.char_table]
    if not hits:
        return store._zero
    return store.matrix[hits].mean(axis=0)


@dataclass(frozen=True)
class EncodedSentence:
    matrix: np.ndarray
    valid_len: int

    @property
    def seq_len(self) -> int:
        return self.matrix.shape[0]


def encode_sentence(tokens: Sequence[str], subjects: Iterable[Span],
                    objects: Iterable[Span], store: EmbeddingStore,
                    seq_len: int = DEFAULT_SEQ_LEN) -> EncodedSentence:
    if not tokens:
        raise ValueError("cannot encode an empty token list")
    subjects = list(subjects)
    objects = list(objects)
    d = store.d
    n = min(len(tokens), seq_len)
    out = np.zeros((seq_len, d + 2))
    for i in range(n):
        tok = tokens[i]
        out[i, :d] = lookup(tok, store)
        out[i, d] = case_feature(tok, store)
        out[i, d + 1] = entity_feature(i, subjects, objects, store)
    return EncodedSentence(out, n)


def encode_batch(examples, store: EmbeddingStore,
                 seq_len: int = DEFAULT_SEQ_LEN) -> np.ndarray:
    """Stack encodings of objects with ``tokens``/``subjects``/``objects``."""
    out = np.zeros((len(examples), seq_len, store.d + 2))
    for k, ex in enumerate(examples):
        out[k] = encode_sentence(ex.tokens, ex.subjects, ex.objects, store,
                                 seq_len).matrix
    return out


def tokenize(text: str) -> list[str]:
    return text.split()
