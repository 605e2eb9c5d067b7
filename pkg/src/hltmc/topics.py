"""Topic extraction from a fitted model, and topic-quality metrics.

Each latent variable splits the documents into a high-activity cluster
(state 1 after relabeling) and a background cluster. A topic reports the
cluster's prior size and the subtree words ranked by how far their two
emission means sit apart. Quality metrics: a document co-occurrence
coherence score and an embedding-based compactness score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import Vocabulary
from .errors import DataError
from .inference import prior_marginals
from .model import HltmcModel
from .structure import BinaryCorpus

DEFAULT_TOP_WORDS = 4


@dataclass(frozen=True)
class TopicWord:
    word: str
    high_mean: float  # emission mean when the parent latent is 1
    low_mean: float  # emission mean when the parent latent is 0

    @property
    def separation(self) -> float:
        return abs(self.high_mean - self.low_mean)


@dataclass(frozen=True)
class Topic:
    latent_id: str
    level: int
    size: float  # prior P(latent = 1)
    words: tuple[TopicWord, ...]


@dataclass(frozen=True)
class TopicTree:
    """One topic per latent, ordered top level first, then subtree position."""

    topics: tuple[Topic, ...]
    parents: dict[str, Optional[str]]  # latent id -> parent latent id

    def by_id(self, latent_id: str) -> Topic:
        for t in self.topics:
            if t.latent_id == latent_id:
                return t
        raise KeyError(latent_id)


def extract_topic(
    model: HltmcModel,
    vocab: Vocabulary,
    latent_id: str,
    top_words: int = DEFAULT_TOP_WORDS,
    _sizes: Optional[Mapping[str, float]] = None,
) -> Topic:
    """Summarize one latent: cluster size and the most separated subtree words.

    Words are ranked by the absolute difference between their two
    emission means, descending, ties broken by vocabulary index, and
    truncated to ``top_words`` entries.
    """
    structure, params = model.structure, model.params
    if latent_id not in structure.by_id or structure.by_id[latent_id].is_leaf():
        raise DataError(f"unknown latent id {latent_id!r}")
    idx = structure.subtree_word_indices(latent_id)
    diffs = np.abs(params.means[idx, 1] - params.means[idx, 0])
    order = sorted(range(idx.size), key=lambda k: (-diffs[k], idx[k]))
    chosen = order[: min(top_words, idx.size)]
    words = tuple(
        TopicWord(
            word=vocab.words[idx[k]],
            high_mean=float(params.means[idx[k], 1]),
            low_mean=float(params.means[idx[k], 0]),
        )
        for k in chosen
    )
    sizes = _sizes if _sizes is not None else prior_marginals(model)
    return Topic(
        latent_id=latent_id,
        level=structure.levels[latent_id],
        size=float(sizes[latent_id]),
        words=words,
    )


def extract_hierarchy(
    model: HltmcModel, vocab: Vocabulary, top_words: int = DEFAULT_TOP_WORDS
) -> TopicTree:
    """One topic per latent variable, mirroring the tree's nesting."""
    structure = model.structure
    sizes = prior_marginals(model)
    topo_pos = {z: j for j, z in enumerate(structure.latent_ids)}
    ordered = sorted(
        structure.latent_ids, key=lambda z: (-structure.levels[z], topo_pos[z])
    )
    topics = tuple(
        extract_topic(model, vocab, z, top_words, _sizes=sizes) for z in ordered
    )
    parents = {
        z: structure.by_id[z].parent for z in structure.latent_ids
    }
    return TopicTree(topics=topics, parents=parents)


@dataclass(frozen=True)
class CoherenceResult:
    score: float
    skipped_terms: int  # pairs dropped because the conditioning word occurs nowhere


def coherence(words: Sequence[str], corpus: BinaryCorpus) -> CoherenceResult:
    """Co-occurrence coherence of an ordered word list.

    Sums log((D(w_i, w_j) + 1) / D(w_j)) over ordered pairs j < i, where
    D counts documents containing the word(s) at least once. Terms whose
    conditioning word never occurs are skipped and counted.
    """
    vocab = corpus.vocab
    for w in words:
        if w not in vocab:
            raise DataError(f"word {w!r} not in vocabulary")
    idx = [vocab.index[w] for w in words]
    score = 0.0
    skipped = 0
    for i in range(1, len(idx)):
        for j in range(i):
            d_j = len(corpus.postings[idx[j]])
            if d_j == 0:
                skipped += 1
                continue
            d_ij = len(corpus.postings[idx[i]] & corpus.postings[idx[j]])
            score += math.log((d_ij + 1) / d_j)
    return CoherenceResult(score=score, skipped_terms=skipped)


@dataclass(frozen=True)
class CompactnessResult:
    score: Optional[float]  # None when fewer than 2 words have embeddings
    retained: int
    skipped: int


def compactness(
    words: Sequence[str], embeddings: Mapping[str, np.ndarray]
) -> CompactnessResult:
    """Mean pairwise cosine similarity of the words' embedding vectors.

    Words missing from the embedding table (or with zero-norm vectors)
    are skipped; the normalizer uses the retained count. Fewer than two
    retained words leave the score undefined.
    """
    vecs = []
    for w in words:
        v = embeddings.get(w)
        if v is None:
            continue
        v = np.asarray(v, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        vecs.append(v / norm)
    retained = len(vecs)
    skipped = len(words) - retained
    if retained < 2:
        return CompactnessResult(score=None, retained=retained, skipped=skipped)
    total = 0.0
    for i in range(1, retained):
        for j in range(i):
            total += float(vecs[i] @ vecs[j])
    pairs = retained * (retained - 1) / 2
    return CompactnessResult(score=total / pairs, retained=retained, skipped=skipped)


@dataclass
class TopicScores:
    latent_id: str
    level: int
    coherence: float
    coherence_skipped: int
    compactness: Optional[float]


@dataclass
class ScoreReport:
    per_topic: list[TopicScores]
    avg_coherence: float
    avg_compactness: Optional[float]
    undefined_compactness: int
    by_level: dict[int, dict[str, float]]


def score_report(
    tree: TopicTree,
    corpus: BinaryCorpus,
    embeddings: Optional[Mapping[str, np.ndarray]] = None,
    top_words: int = DEFAULT_TOP_WORDS,
) -> ScoreReport:
    """Score every topic and average, excluding undefined compactness values.

    Averages are unweighted over topics; a per-level breakdown is
    included since level and size weighting are both defensible.
    """
    if not tree.topics:
        raise DataError("empty topic tree")
    rows: list[TopicScores] = []
    for t in tree.topics:
        words = [w.word for w in t.words[:top_words]]
        coh = coherence(words, corpus)
        comp = compactness(words, embeddings).score if embeddings is not None else None
        rows.append(
            TopicScores(
                latent_id=t.latent_id,
                level=t.level,
                coherence=coh.score,
                coherence_skipped=coh.skipped_terms,
                compactness=comp,
            )
        )
    defined = [r.compactness for r in rows if r.compactness is not None]
    by_level: dict[int, dict[str, float]] = {}
    for level in sorted({r.level for r in rows}, reverse=True):
        in_level = [r for r in rows if r.level == level]
        comp_lv = [r.compactness for r in in_level if r.compactness is not None]
        by_level[level] = {
            "n_topics": float(len(in_level)),
            "avg_coherence": float(np.mean([r.coherence for r in in_level])),
            "avg_compactness": float(np.mean(comp_lv)) if comp_lv else float("nan"),
        }
    return ScoreReport(
        per_topic=rows,
        avg_coherence=float(np.mean([r.coherence for r in rows])),
        avg_compactness=float(np.mean(defined)) if defined else None,
        undefined_compactness=len(rows) - len(defined),
        by_level=by_level,
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def format_topic_tree(tree: TopicTree) -> str:
    """Indented text rendering, one topic per line under its parent."""
    children: dict[Optional[str], list[str]] = {}
    for z, parent in tree.parents.items():
        children.setdefault(parent, []).append(z)
    order = {t.latent_id: i for i, t in enumerate(tree.topics)}
    lines: list[str] = []

    def render(z: str, depth: int) -> None:
        t = tree.by_id(z)
        words = " ".join(w.word for w in t.words)
        lines.append(f"{'    ' * depth}{z} [{t.size:.2f}] {words}")
        for c in sorted(children.get(z, []), key=order.__getitem__):
            render(c, depth + 1)

    roots = children.get(None, [])
    for r in roots:
        render(r, 0)
    return "\n".join(lines) + "\n"


def topic_tree_to_json(tree: TopicTree) -> str:
    doc = [
        {
            "latent": t.latent_id,
            "level": t.level,
            "parent": tree.parents[t.latent_id],
            "size": t.size,
            "words": [
                {
                    "word": w.word,
                    "high_mean": w.high_mean,
                    "low_mean": w.low_mean,
                    "separation": w.separation,
                }
                for w in t.words
            ],
        }
        for t in tree.topics
    ]
    return json.dumps(doc, indent=1)
