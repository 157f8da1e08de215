"""Corpus ingestion: score thresholds, tokenization, featurization and batching."""

from __future__ import annotations

import csv
import enum
import hashlib
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from drosent.errors import DataFormatError, InvalidConfigError, InvalidInputError, InvalidScoreError

MAX_TOKENS = 512
DEFAULT_HASH_DIM = 2048
EMBEDDING_MAGIC = b"DROEMB1\n"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class Scale(enum.Enum):
    TEN = "ten"
    FIVE = "five"

    @property
    def max_score(self):
        return 10.0 if self is Scale.TEN else 4.0


class Sentiment(enum.Enum):
    NEGATIVE = 0
    POSITIVE = 1
    EXCLUDED = None


@dataclass(frozen=True)
class RawReview:
    text: str
    score: float
    scale: Scale

    def __post_init__(self):
        _check_score(self.score, self.scale)


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int
    tokens: tuple
    doc_id: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0 or 1, got {self.label!r}")
        if not 1 <= len(self.tokens) <= MAX_TOKENS:
            raise InvalidInputError(
                f"document {self.doc_id} has {len(self.tokens)} tokens; expected 1..{MAX_TOKENS}")

    @classmethod
    def from_text(cls, text, label, doc_id=0, max_len=MAX_TOKENS):
        return cls(text, int(label), tuple(truncate_to_max(tokenize(text), max_len)), doc_id)

    def __len__(self):
        return len(self.tokens)


def _check_score(score, scale):
    if not (math.isfinite(score) and 0 <= score <= scale.max_score):
        raise InvalidScoreError(f"score {score!r} outside the {scale.value}-point range 0..{scale.max_score:g}")


def label_ten_point(score):
    """IMDB-style scores: <= 4 negative, >= 7 positive, 5 and 6 excluded."""
    _check_score(score, Scale.TEN)
    if score <= 4:
        return Sentiment.NEGATIVE
    if score >= 7:
        return Sentiment.POSITIVE
    return Sentiment.EXCLUDED


def label_five_point(score):
    """Treebank-style 0..4 scores: < 2 negative, > 2 positive, exactly 2 excluded."""
    _check_score(score, Scale.FIVE)
    if score < 2:
        return Sentiment.NEGATIVE
    if score > 2:
        return Sentiment.POSITIVE
    return Sentiment.EXCLUDED


def label_review(review):
    if review.scale is Scale.TEN:
        return label_ten_point(review.score)
    return label_five_point(review.score)


def tokenize(text):
    """Lowercase; words and individual punctuation marks become tokens."""
    return _TOKEN_RE.findall(text.lower())


def truncate_to_max(tokens, max_len=MAX_TOKENS):
    if max_len < 1:
        raise InvalidConfigError(f"max_len must be >= 1, got {max_len}")
    return list(tokens[:max_len])


def preprocess(reviews, max_len=MAX_TOKENS):
    """Label and tokenize reviews; returns ``(examples, n_excluded)``.

    Kept examples are numbered 0, 1, ... in input order, which is also their
    row order in a parsed CSV.
    """
    examples = []
    excluded = 0
    for review in reviews:
        sentiment = label_review(review)
        if sentiment is Sentiment.EXCLUDED:
            excluded += 1
            continue
        examples.append(LabeledExample.from_text(review.text, sentiment.value, len(examples), max_len))
    return examples, excluded


# -- CSV ------------------------------------------------------------------------

def _read_rows(path, header):
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            first = next(reader, None)
            if first != header:
                raise DataFormatError(f"{path}:1: expected header {','.join(header)!r}, got {first!r}")
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataFormatError(
                        f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
                yield reader.line_num, row
        except csv.Error as exc:
            raise DataFormatError(f"{path}:{reader.line_num}: {exc}") from exc


def load_corpus_csv(path, scale):
    """Read a ``text,score`` corpus."""
    scale = Scale(scale)
    reviews = []
    for line, (text, score) in _read_rows(path, ["text", "score"]):
        try:
            value = float(score)
        except ValueError:
            raise DataFormatError(f"{path}:{line}: score {score!r} is not a number") from None
        if not tokenize(text):
            raise DataFormatError(f"{path}:{line}: review text has no tokens")
        try:
            reviews.append(RawReview(text, value, scale))
        except InvalidScoreError as exc:
            raise InvalidScoreError(f"{path}:{line}: {exc}") from None
    return reviews


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        handle.write(",".join(header) + "\n")
        writer = csv.writer(handle, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        writer.writerows(rows)


def write_corpus_csv(reviews, path):
    _write_rows(path, ["text", "score"], ((r.text, float(r.score)) for r in reviews))


def write_parsed_csv(examples, path):
    _write_rows(path, ["text", "label"], ((e.text, int(e.label)) for e in examples))


def load_parsed_csv(path, max_len=MAX_TOKENS):
    examples = []
    for line, (text, label) in _read_rows(path, ["text", "label"]):
        if label not in ("0", "1"):
            raise DataFormatError(f"{path}:{line}: label must be 0 or 1, got {label!r}")
        try:
            examples.append(LabeledExample.from_text(text, int(label), len(examples), max_len))
        except InvalidInputError as exc:
            raise DataFormatError(f"{path}:{line}: {exc}") from None
    return examples


# -- features -------------------------------------------------------------------

def token_hash(token):
    """64-bit BLAKE2b digest of the UTF-8 token, read little-endian."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def write_embedding_file(path, documents, dim):
    """Write ``{doc_id: array (T, dim)}`` in the binary embedding format."""
    with Path(path).open("wb") as handle:
        handle.write(EMBEDDING_MAGIC)
        handle.write(struct.pack("<II", dim, len(documents)))
        for doc_id in sorted(documents):
            vectors = np.asarray(documents[doc_id], dtype="<f4")
            if vectors.ndim != 2 or vectors.shape[1] != dim:
                raise DataFormatError(f"document {doc_id}: expected shape (T, {dim}), got {vectors.shape}")
            handle.write(struct.pack("<II", doc_id, vectors.shape[0]))
            handle.write(vectors.tobytes())


def read_embedding_file(path):
    """Returns ``(dim, {doc_id: float32 array (T, dim)})``."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    if not blob.startswith(EMBEDDING_MAGIC):
        raise DataFormatError(f"{path}: not an embedding file (bad magic)")
    offset = len(EMBEDDING_MAGIC)
    try:
        dim, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if dim < 1:
            raise DataFormatError(f"{path}: embedding dim must be >= 1")
        table = {}
        for _ in range(count):
            doc_id, T = struct.unpack_from("<II", blob, offset)
            offset += 8
            n = T * dim
            if offset + 4 * n > len(blob):
                raise DataFormatError(f"{path}: truncated vectors for document {doc_id}")
            table[doc_id] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(T, dim)
            offset += 4 * n
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated header ({exc})") from None
    if offset != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return dim, table


class FeatureSource:
    """Where per-document feature vectors come from.

    ``hashed`` builds an L2-normalized hashed bag of words on the fly;
    ``embedding`` looks up precomputed per-token vectors by document id.
    """

    def __init__(self, kind="hashed", dim=DEFAULT_HASH_DIM, path=None):
        if kind not in ("hashed", "embedding"):
            raise InvalidConfigError(f"unknown feature source {kind!r}")
        self.kind = kind
        self.path = None if path is None else str(path)
        self._table = None
        if kind == "embedding":
            if path is None:
                raise InvalidConfigError("embedding feature source needs a file path")
            file_dim, self._table = read_embedding_file(path)
            if dim is not None and dim != file_dim:
                raise DataFormatError(f"{path}: header dim {file_dim} != expected {dim}")
            dim = file_dim
        if dim is None or dim < 1:
            raise InvalidConfigError(f"feature dim must be >= 1, got {dim}")
        self.dim = int(dim)

    @classmethod
    def hashed(cls, dim=DEFAULT_HASH_DIM):
        return cls("hashed", dim)

    @classmethod
    def embedding(cls, path, dim=None):
        return cls("embedding", dim, path)

    def describe(self):
        if self.kind == "hashed":
            return {"kind": "hashed", "dim": self.dim}
        return {"kind": "embedding", "dim": self.dim, "path": self.path}

    def __repr__(self):
        return f"FeatureSource({self.describe()})"

    def __eq__(self, other):
        return isinstance(other, FeatureSource) and self.describe() == other.describe()


def hashed_bow(tokens, dim):
    vec = np.zeros(dim)
    for token in tokens:
        vec[token_hash(token) % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def featurize(example, source):
    """Feature vector ``(dim,)`` for hashed sources, ``(T, dim)`` per-token vectors for embeddings.

    ``example`` may be a LabeledExample or, for hashed sources, a token list.
    """
    if source.kind == "hashed":
        tokens = example.tokens if isinstance(example, LabeledExample) else example
        return hashed_bow(tokens, source.dim)
    doc_id = example.doc_id
    try:
        return np.asarray(source._table[doc_id], dtype=float)
    except KeyError:
        raise DataFormatError(f"document id {doc_id} not found in {source.path}") from None


# -- batching -------------------------------------------------------------------

def batch_indices(lengths, batch_size, rng_seed):
    """Seeded shuffle into batches, each sorted by decreasing length (ties keep index order)."""
    if batch_size < 1:
        raise InvalidConfigError(f"batch_size must be >= 1, got {batch_size}")
    lengths = list(lengths)
    order = np.random.default_rng(rng_seed).permutation(len(lengths))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        batches.append(sorted(chunk.tolist(), key=lambda i: (-lengths[i], i)))
    return batches


def make_batches(examples, batch_size, rng_seed, length=len):
    lengths = [length(e) for e in examples]
    return [[examples[i] for i in batch] for batch in batch_indices(lengths, batch_size, rng_seed)]
