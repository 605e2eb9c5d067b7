"""Held-out likelihood of count documents under the generative reading.

The probability of a document is an integral of the multinomial term
over the distribution of relative-frequency vectors. Two Monte Carlo
estimators are provided: a naive one that samples frequencies from the
generation prior, and an importance-sampling one whose proposal draws
the leaf-parent latents from their posteriors given the document's
empirical frequencies. The naive estimator underestimates badly on long
documents because the prior rarely hits the region where the multinomial
term is large; the importance sampler exists to fix exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from ._parallel import map_chunks, split_chunks
from .corpus import CountCorpus
from .densities import truncnorm_transform
from .errors import DataError
from .inference import level1_joint_logprob_batch, posteriors
from .model import HltmcModel
from .sampling import sample_latents_matrix

_PROPOSAL_FLOOR = 1e-12


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 300
    seed: int = 0
    estimator: str = "importance"  # or "naive"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.estimator not in ("importance", "naive"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def multinomial_log_prob(counts: np.ndarray, relfreq: np.ndarray) -> float:
    """log P(counts | relfreq) under the multinomial with N = sum(counts).

    Words with positive count but zero frequency give -inf (a value, not
    an error); a zero-length document has log-probability 0.
    """
    counts = np.asarray(counts, dtype=np.int64)
    relfreq = np.asarray(relfreq, dtype=np.float64)
    if counts.shape != relfreq.shape or counts.ndim != 1:
        raise DataError("counts and frequencies must be 1-d and the same length")
    if np.any(counts < 0):
        raise DataError("negative count")
    return float(_multinomial_log_prob_rows(counts, relfreq[None, :])[0])


def _multinomial_log_prob_rows(counts: np.ndarray, freq_rows: np.ndarray) -> np.ndarray:
    """(K, V) frequency rows -> (K,) log multinomial probabilities of ``counts``."""
    n = counts.sum()
    coef = gammaln(n + 1.0) - gammaln(counts + 1.0).sum()
    pos = counts > 0
    if not np.any(pos):
        return np.full(freq_rows.shape[0], float(coef))
    with np.errstate(divide="ignore"):
        logs = np.log(freq_rows[:, pos])
    return coef + logs @ counts[pos]


def _log_mean_exp(values: np.ndarray) -> float:
    if np.all(np.isneginf(values)):
        return -np.inf
    return float(logsumexp(values) - np.log(values.size))


def _sample_freq_rows(
    model: HltmcModel, leaf_states: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw (K, V) normalized frequency rows given per-leaf parent states."""
    params = model.params
    K, V = leaf_states.shape
    cols = np.arange(V)
    mu = params.means[cols[None, :], leaf_states]
    sd = params.stdevs[cols[None, :], leaf_states]
    x = np.asarray(truncnorm_transform(rng.random((K, V)), mu, sd))
    return x / x.sum(axis=1, keepdims=True)


def _leaf_state_rows(model: HltmcModel, latents: dict[str, np.ndarray]) -> np.ndarray:
    structure = model.structure
    V = structure.n_leaves
    K = next(iter(latents.values())).shape[0]
    out = np.empty((K, V), dtype=np.int64)
    for z in structure.leaf_parents:
        out[:, structure.leaf_children[z]] = latents[z][:, None]
    return out


def naive_mc_loglik(
    model: HltmcModel,
    counts: np.ndarray,
    config: EvalConfig = EvalConfig(),
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Monte Carlo estimate of log P(document): average the multinomial
    term over frequency vectors sampled from the generation prior."""
    counts = np.asarray(counts, dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    latents = sample_latents_matrix(model, config.n_samples, rng)
    freq = _sample_freq_rows(model, _leaf_state_rows(model, latents), rng)
    return _log_mean_exp(_multinomial_log_prob_rows(counts, freq))


def importance_sampling_loglik(
    model: HltmcModel,
    counts: np.ndarray,
    config: EvalConfig = EvalConfig(),
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Importance-sampled estimate of log P(document).

    The proposal factorizes over the leaf-parent latents: each is drawn
    independently from its posterior given the document's empirical
    relative frequencies (floored away from 0 and 1). Sampled weights
    are the multinomial term times the prior/proposal ratio of the
    latent assignment; upper latents never need sampling because the
    leaves are independent of them given their parents.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n < 1:
        raise DataError("importance sampling requires a document of length >= 1")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    structure = model.structure
    ids = structure.leaf_parents

    post = posteriors(model, counts / n)
    q1 = np.clip(
        np.asarray([post.marginals[z] for z in ids]),
        _PROPOSAL_FLOOR,
        1.0 - _PROPOSAL_FLOOR,
    )
    K = config.n_samples
    draws = (rng.random((K, len(ids))) < q1[None, :]).astype(np.int64)
    log_q = np.where(draws == 1, np.log(q1)[None, :], np.log1p(-q1)[None, :]).sum(axis=1)
    log_p = level1_joint_logprob_batch(model, ids, draws)

    latents = {z: draws[:, j] for j, z in enumerate(ids)}
    freq = _sample_freq_rows(model, _leaf_state_rows(model, latents), rng)
    log_w = _multinomial_log_prob_rows(counts, freq) + log_p - log_q
    return _log_mean_exp(log_w)


@dataclass
class HeldoutReport:
    """Per-document estimates plus their mean and its standard error."""

    per_doc: np.ndarray
    doc_ids: tuple[int, ...]
    mean: float
    std_error: float  # standard error of the per-document mean
    estimator: str
    n_samples: int
    seed: int
    skipped_empty: int


def _score_chunk(model, config, jobs):
    out = []
    for counts, seed_seq in jobs:
        rng = np.random.default_rng(seed_seq)
        if config.estimator == "importance":
            out.append(importance_sampling_loglik(model, counts, config, rng))
        else:
            out.append(naive_mc_loglik(model, counts, config, rng))
    return out


def heldout_report(
    model: HltmcModel,
    corpus: CountCorpus,
    config: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> HeldoutReport:
    """Score every document of a test corpus and summarize.

    Each document gets its own generator spawned from the config seed, so
    results do not depend on the worker count. Zero-length documents are
    skipped and counted.
    """
    if corpus.n_docs == 0:
        raise DataError("empty test corpus")
    keep = [j for j, d in enumerate(corpus.docs) if d.length > 0]
    skipped = corpus.n_docs - len(keep)
    if not keep:
        raise DataError("test corpus has no nonempty documents")

    seeds = np.random.SeedSequence(config.seed).spawn(len(keep))
    V = corpus.n_words
    jobs = [(corpus.docs[j].dense(V), seeds[k]) for k, j in enumerate(keep)]
    chunks = [
        [jobs[i] for i in block]
        for block in split_chunks(len(jobs), max(1, workers) * 4)
    ]
    results = map_chunks(partial(_score_chunk, model, config), chunks, workers)
    per_doc = np.asarray([v for block in results for v in block])

    mean = float(per_doc.mean())
    std_error = (
        float(per_doc.std(ddof=1) / np.sqrt(per_doc.size)) if per_doc.size > 1 else 0.0
    )
    doc_ids = tuple(
        corpus.doc_ids[j] if corpus.doc_ids is not None else j for j in keep
    )
    return HeldoutReport(
        per_doc=per_doc,
        doc_ids=doc_ids,
        mean=mean,
        std_error=std_error,
        estimator=config.estimator,
        n_samples=config.n_samples,
        seed=config.seed,
        skipped_empty=skipped,
    )
