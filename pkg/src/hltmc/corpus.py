"""Corpus ingestion: UCI bag-of-words files, vocabulary selection, splitting.

The on-disk corpus format is the UCI "docword" layout: three header lines
(document count D, vocabulary size W, nonzero count NNZ) followed by
one ``docId wordId count`` triple per line, all ids 1-based. The
vocabulary file has one word per line, line number = word id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Vocabulary:
    """Ordered unique word strings with dense indices 0..V-1."""

    words: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise DataError("vocabulary contains duplicate words")

    @cached_property
    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __getitem__(self, i: int) -> str:
        return self.words[i]


@dataclass(frozen=True)
class SparseDoc:
    """One document as parallel (vocabulary index, count) arrays.

    Indices are strictly increasing and counts strictly positive; a
    zero-length document is an empty pair of arrays.
    """

    indices: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        cnt = np.asarray(self.counts, dtype=np.int64)
        if idx.shape != cnt.shape or idx.ndim != 1:
            raise DataError("indices and counts must be 1-d arrays of equal length")
        if idx.size and (np.any(np.diff(idx) <= 0)):
            raise DataError("document indices must be strictly increasing")
        if np.any(cnt < 1):
            raise DataError("document counts must be >= 1")
        idx.setflags(write=False)
        cnt.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "counts", cnt)

    @property
    def length(self) -> int:
        return int(self.counts.sum())

    def dense(self, n_words: int) -> np.ndarray:
        out = np.zeros(n_words, dtype=np.int64)
        out[self.indices] = self.counts
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseDoc):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.counts, other.counts
        )


def _doc_from_counts(counts: np.ndarray) -> SparseDoc:
    counts = np.asarray(counts)
    nz = np.nonzero(counts)[0]
    return SparseDoc(indices=nz, counts=counts[nz])


@dataclass(frozen=True, eq=False)
class CountCorpus:
    """Documents as sparse word-count vectors over one vocabulary."""

    vocab: Vocabulary
    docs: tuple[SparseDoc, ...]
    doc_ids: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        V = len(self.vocab)
        for j, d in enumerate(self.docs):
            if d.indices.size and int(d.indices[-1]) >= V:
                raise DataError(f"document {j}: word index out of range")
        if self.doc_ids is not None and len(self.doc_ids) != len(self.docs):
            raise DataError("doc_ids length does not match document count")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def n_words(self) -> int:
        return len(self.vocab)

    def lengths(self) -> np.ndarray:
        return np.asarray([d.length for d in self.docs], dtype=np.int64)

    def dense_counts(self) -> np.ndarray:
        """(D, V) dense count matrix; intended for desk-scale corpora."""
        out = np.zeros((self.n_docs, self.n_words), dtype=np.int64)
        for j, d in enumerate(self.docs):
            out[j, d.indices] = d.counts
        return out

    @classmethod
    def from_dense(cls, counts: np.ndarray, vocab: Vocabulary,
                   doc_ids: Optional[Sequence[int]] = None) -> "CountCorpus":
        docs = tuple(_doc_from_counts(row) for row in np.asarray(counts))
        ids = tuple(doc_ids) if doc_ids is not None else None
        return cls(vocab=vocab, docs=docs, doc_ids=ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountCorpus):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.docs == other.docs
            and self.doc_ids == other.doc_ids
        )


# ---------------------------------------------------------------------------
# file io
# ---------------------------------------------------------------------------


def load_vocab(path) -> Vocabulary:
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            w = line.strip()
            if not w:
                raise DataError(f"{path}:{lineno}: empty vocabulary line")
            words.append(w)
    if not words:
        raise DataError(f"{path}: empty vocabulary file")
    return Vocabulary(tuple(words))


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in vocab.words:
            fh.write(w + "\n")


def _parse_header_int(line: str, path, lineno: int, what: str) -> int:
    try:
        value = int(line.strip())
    except ValueError:
        raise DataError(f"{path}:{lineno}: expected integer {what}, got {line.strip()!r}")
    if value < 0:
        raise DataError(f"{path}:{lineno}: negative {what}")
    return value


def load_uci_bow(docword_path, vocab_path) -> CountCorpus:
    """Parse a UCI bag-of-words pair of files into a corpus."""
    return load_docword(docword_path, load_vocab(vocab_path))


def load_docword(docword_path, vocab: Vocabulary) -> CountCorpus:
    """Parse a UCI docword file against an already loaded vocabulary.

    Documents absent from the triple section are materialized with zero
    length. Duplicate (doc, word) pairs are aggregated. Malformed lines,
    out-of-range ids and header/NNZ mismatches are rejected.
    """
    with open(docword_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise DataError(f"{docword_path}: missing 3-line header")
    n_docs = _parse_header_int(lines[0], docword_path, 1, "document count")
    n_words = _parse_header_int(lines[1], docword_path, 2, "vocabulary size")
    nnz = _parse_header_int(lines[2], docword_path, 3, "nonzero count")
    if n_words != len(vocab):
        raise DataError(
            f"{docword_path}: header vocabulary size {n_words} "
            f"!= {len(vocab)} words in the vocabulary"
        )

    per_doc: list[dict[int, int]] = [dict() for _ in range(n_docs)]
    n_triples = 0
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{docword_path}:{lineno}: expected 'docId wordId count'")
        try:
            doc_id, word_id, count = (int(p) for p in parts)
        except ValueError:
            raise DataError(f"{docword_path}:{lineno}: non-integer field")
        if not (1 <= doc_id <= n_docs):
            raise DataError(f"{docword_path}:{lineno}: docId {doc_id} out of range")
        if not (1 <= word_id <= n_words):
            raise DataError(f"{docword_path}:{lineno}: wordId {word_id} out of range")
        if count < 1:
            raise DataError(f"{docword_path}:{lineno}: count {count} must be >= 1")
        d = per_doc[doc_id - 1]
        d[word_id - 1] = d.get(word_id - 1, 0) + count
        n_triples += 1
    if n_triples != nnz:
        raise DataError(
            f"{docword_path}: header NNZ {nnz} != {n_triples} triples in file"
        )

    docs = []
    for d in per_doc:
        idx = np.asarray(sorted(d), dtype=np.int64)
        docs.append(SparseDoc(indices=idx, counts=np.asarray([d[i] for i in idx], dtype=np.int64)))
    return CountCorpus(vocab=vocab, docs=tuple(docs), doc_ids=tuple(range(1, n_docs + 1)))


def save_uci_bow(corpus: CountCorpus, docword_path, vocab_path) -> None:
    """Write a corpus back out in the same UCI docword/vocab layout."""
    nnz = sum(int(d.indices.size) for d in corpus.docs)
    with open(docword_path, "w", encoding="utf-8") as fh:
        fh.write(f"{corpus.n_docs}\n{corpus.n_words}\n{nnz}\n")
        for j, d in enumerate(corpus.docs, start=1):
            for i, c in zip(d.indices, d.counts):
                fh.write(f"{j} {int(i) + 1} {int(c)}\n")
    save_vocab(corpus.vocab, vocab_path)


# ---------------------------------------------------------------------------
# vocabulary selection and splitting
# ---------------------------------------------------------------------------


def tfidf_scores(corpus: CountCorpus, average: str = "all") -> np.ndarray:
    """Per-word average tf-idf over the corpus.

    tf is count/length within a document, idf is ln(D / doc-frequency)
    with no smoothing. ``average="all"`` divides by the total document
    count (absent word contributes 0); ``average="containing"`` divides
    by the word's document frequency.
    """
    if average not in ("all", "containing"):
        raise ValueError(f"unknown averaging mode {average!r}")
    D = corpus.n_docs
    if D == 0:
        raise DataError("empty corpus")
    V = corpus.n_words
    tf_sum = np.zeros(V)
    doc_freq = np.zeros(V)
    for d in corpus.docs:
        n = d.length
        if n == 0:
            continue
        tf_sum[d.indices] += d.counts / n
        doc_freq[d.indices] += 1.0
    idf = np.zeros(V)
    present = doc_freq > 0
    idf[present] = np.log(D / doc_freq[present])
    denom = float(D) if average == "all" else np.where(present, doc_freq, 1.0)
    return tf_sum * idf / denom


def select_vocab_tfidf(
    corpus: CountCorpus, target_size: int, average: str = "all"
) -> tuple[Vocabulary, CountCorpus]:
    """Keep the ``target_size`` highest average-tf-idf words and reproject.

    Ties break on the word string. Kept words retain their original
    relative order in the new vocabulary. Documents that lose all their
    words stay in the corpus with zero length; relative-frequency
    conversion drops them later.
    """
    if target_size < 1:
        raise DataError(f"target vocabulary size must be >= 1, got {target_size}")
    if target_size > corpus.n_words:
        raise DataError(
            f"target vocabulary size {target_size} exceeds current size {corpus.n_words}"
        )
    scores = tfidf_scores(corpus, average=average)
    ranked = sorted(range(corpus.n_words), key=lambda i: (-scores[i], corpus.vocab.words[i]))
    kept = sorted(ranked[:target_size])
    new_vocab = Vocabulary(tuple(corpus.vocab.words[i] for i in kept))
    remap = {old: new for new, old in enumerate(kept)}

    new_docs = []
    for d in corpus.docs:
        keep_mask = np.isin(d.indices, kept)
        idx = np.asarray([remap[int(i)] for i in d.indices[keep_mask]], dtype=np.int64)
        new_docs.append(SparseDoc(indices=idx, counts=d.counts[keep_mask]))
    return new_vocab, CountCorpus(vocab=new_vocab, docs=tuple(new_docs), doc_ids=corpus.doc_ids)


def split_corpus(
    corpus: CountCorpus, train_fraction: float = 0.8, seed: int = 0
) -> tuple[CountCorpus, CountCorpus]:
    """Seeded shuffle split; the first ceil(fraction * D) documents train."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(corpus.n_docs)
    n_train = math.ceil(train_fraction * corpus.n_docs)

    def take(idx: np.ndarray) -> CountCorpus:
        ids = tuple(corpus.doc_ids[i] for i in idx) if corpus.doc_ids else None
        return CountCorpus(
            vocab=corpus.vocab,
            docs=tuple(corpus.docs[i] for i in idx),
            doc_ids=ids,
        )

    return take(order[:n_train]), take(order[n_train:])
