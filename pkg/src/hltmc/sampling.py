"""Document generation: latents, truncated-normal frequencies, words.

A document of length N is produced in four steps: ancestral sampling of
the binary latents (root first), one [0,1]-truncated normal draw per
word conditioned on its parent's value, normalization onto the simplex,
and N categorical word draws. Every step consumes randomness from one
seeded generator in a documented order, so a fixed seed reproduces the
document exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import CountCorpus, SparseDoc, Vocabulary
from .densities import truncnorm_transform
from .errors import DataError
from .model import HltmcModel


def sample_latents(model: HltmcModel, rng: np.random.Generator) -> dict[str, int]:
    """Draw one value per latent by ancestral sampling in topological order."""
    structure, params = model.structure, model.params
    out: dict[str, int] = {}
    for z in structure.latent_ids:
        if z == structure.root_id:
            p1 = params.root_prior
        else:
            p1 = params.cpts[z][out[structure.by_id[z].parent], 1]
        out[z] = int(rng.random() < p1)
    return out


def sample_latents_matrix(
    model: HltmcModel, n: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Vectorized ancestral sampling: one (n,) 0/1 array per latent.

    Uniforms are consumed latent-by-latent (all n draws for the root,
    then the next latent, ...), unlike the per-document order of
    :func:`sample_latents`.
    """
    structure, params = model.structure, model.params
    out: dict[str, np.ndarray] = {}
    for z in structure.latent_ids:
        if z == structure.root_id:
            p1 = np.full(n, params.root_prior)
        else:
            p1 = params.cpts[z][out[structure.by_id[z].parent], 1]
        out[z] = (rng.random(n) < p1).astype(np.int64)
    return out


def sample_truncated_normal(mu, sigma, rng: np.random.Generator, size=None):
    """Inverse-CDF draw from N(mu, sigma^2) truncated to [0, 1].

    One uniform is consumed per sample; the result is clamped strictly
    inside (0, 1). Works for means outside [0, 1] as long as the
    truncation mass does not underflow.
    """
    u = rng.random(size) if size is not None else rng.random()
    return truncnorm_transform(u, mu, sigma)


def _leaf_states(model: HltmcModel, latents: Mapping[str, int]) -> np.ndarray:
    structure = model.structure
    V = structure.n_leaves
    states = np.empty(V, dtype=np.int64)
    for i in range(V):
        states[i] = latents[structure.word_parent[i]]
    return states


def generate_urf(
    model: HltmcModel, latents: Mapping[str, int], rng: np.random.Generator
) -> np.ndarray:
    """Draw the unnormalized relative frequency of every word.

    Each word's value comes from the truncated normal selected by its
    parent's sampled state; draws are independent across words and
    consumed in vocabulary-index order.
    """
    params = model.params
    states = _leaf_states(model, latents)
    idx = np.arange(model.structure.n_leaves)
    u = rng.random(idx.size)
    return np.asarray(
        truncnorm_transform(u, params.means[idx, states], params.stdevs[idx, states])
    )


def normalize_urf(x: np.ndarray) -> np.ndarray:
    """Project positive frequencies onto the simplex: y_i = x_i / sum(x)."""
    x = np.asarray(x, dtype=np.float64)
    s = x.sum()
    if not s > 0.0:
        raise DataError("cannot normalize an all-zero frequency vector")
    return x / s


def draw_word_counts(y: np.ndarray, n_words: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_words`` iid words from the categorical ``y`` and count them.

    Uses inverse-CDF lookup on the cumulative sums, one uniform per word.
    """
    y = np.asarray(y, dtype=np.float64)
    cum = np.cumsum(y)
    cum[-1] = 1.0  # guard against cumulative rounding
    u = rng.random(n_words)
    idx = np.searchsorted(cum, u, side="right")
    return np.bincount(idx, minlength=y.size).astype(np.int64)


@dataclass(frozen=True)
class GeneratedDoc:
    """A sampled document with its generation intermediates kept for testing."""

    counts: np.ndarray
    latents: dict[str, int]
    urf: np.ndarray
    relfreq: np.ndarray


def generate_document(model: HltmcModel, n_words: int, rng: np.random.Generator) -> GeneratedDoc:
    """Run the full generation process for one document of ``n_words`` words."""
    if n_words < 0:
        raise ValueError(f"document length must be >= 0, got {n_words}")
    latents = sample_latents(model, rng)
    urf = generate_urf(model, latents, rng)
    relfreq = normalize_urf(urf)
    counts = draw_word_counts(relfreq, n_words, rng)
    return GeneratedDoc(counts=counts, latents=latents, urf=urf, relfreq=relfreq)


def generate_corpus(
    model: HltmcModel,
    vocab: Vocabulary,
    lengths: Sequence[int],
    rng: np.random.Generator,
) -> CountCorpus:
    """Generate one document per entry of ``lengths`` into a corpus."""
    if len(vocab) != model.structure.n_leaves:
        raise DataError("vocabulary size does not match the model's leaf count")
    docs = []
    for n in lengths:
        counts = generate_document(model, int(n), rng).counts
        nz = np.nonzero(counts)[0]
        docs.append(SparseDoc(indices=nz, counts=counts[nz]))
    return CountCorpus(vocab=vocab, docs=tuple(docs))


def empirical_lengths(
    reference: CountCorpus, n_docs: int, rng: np.random.Generator
) -> np.ndarray:
    """Resample document lengths with replacement from a reference corpus."""
    lengths = reference.lengths()
    lengths = lengths[lengths > 0]
    if lengths.size == 0:
        raise DataError("reference corpus has no nonempty documents")
    return rng.choice(lengths, size=n_docs, replace=True)
