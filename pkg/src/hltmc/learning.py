"""Maximum-likelihood parameter estimation on relative-frequency data.

Full-batch EM and stepwise EM over the Gaussian-leaf reading of the
model. The E step accumulates expected counts from exact tree posteriors
(vectorized over documents); the M step is closed form. Stepwise EM
keeps per-document-normalized running statistics and interpolates them
with step size (t + 2) ** -step_exponent per minibatch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np

from ._parallel import map_chunks, split_chunks
from .corpus import CountCorpus
from .errors import DataError
from .inference import BatchPosteriors, leaf_log_densities, _pass
from .model import (
    DEFAULT_SIGMA_FLOOR,
    HltmcModel,
    ParamSet,
    TreeStructure,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """Knobs shared by batch and stepwise fitting."""

    max_iters: int = 200
    tol: float = 1e-5  # relative per-document log-likelihood change
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    seed: int = 0
    n_restarts: int = 1
    minibatch_size: int = 1000  # stepwise only
    step_exponent: float = 0.75  # stepwise only
    epochs: int = 1  # stepwise only

    def __post_init__(self):
        if self.max_iters < 1 or self.n_restarts < 1 or self.epochs < 1:
            raise ValueError("max_iters, n_restarts and epochs must be positive")
        if self.tol <= 0 or self.sigma_floor <= 0 or self.minibatch_size < 1:
            raise ValueError("tol, sigma_floor and minibatch_size must be positive")
        if not (0.5 < self.step_exponent <= 1.0):
            raise ValueError("step_exponent must lie in (0.5, 1]")


@dataclass
class RelFreqData:
    """Relative-frequency matrix with bookkeeping of dropped empty docs."""

    matrix: np.ndarray  # (D, V)
    kept: tuple[int, ...]  # positions of the kept documents in the source corpus
    dropped: int


def counts_to_relfreq(corpus: CountCorpus) -> RelFreqData:
    """Turn count documents into rows (N_1/N, ..., N_V/N).

    Zero-length documents carry no frequency information and are dropped;
    the number dropped is reported on the result and logged.
    """
    if corpus.n_docs == 0:
        raise DataError("empty corpus")
    kept = [j for j, d in enumerate(corpus.docs) if d.length > 0]
    dropped = corpus.n_docs - len(kept)
    if not kept:
        raise DataError("corpus has no nonempty documents")
    if dropped:
        logger.warning("dropping %d zero-length documents", dropped)
    matrix = np.zeros((len(kept), corpus.n_words))
    for row, j in enumerate(kept):
        d = corpus.docs[j]
        matrix[row, d.indices] = d.counts / d.length
    return RelFreqData(matrix=matrix, kept=tuple(kept), dropped=dropped)


@dataclass
class SufficientStats:
    """Expected counts that make the M step closed form.

    Latent statistics come from posterior node and edge marginals; each
    leaf's moment statistics are weighted by the posterior of its
    parent's state. ``loglik`` is the summed log-likelihood of the
    accumulated documents at the parameters used in the E step.
    """

    total_weight: float
    loglik: float
    root_state1: float
    edge_counts: dict[str, np.ndarray]  # non-root latent -> (2, 2), [parent, child]
    leaf_weight: np.ndarray  # (V, 2)
    leaf_wsum: np.ndarray  # (V, 2)
    leaf_wsum2: np.ndarray  # (V, 2)

    @classmethod
    def zeros(cls, structure: TreeStructure) -> "SufficientStats":
        V = structure.n_leaves
        non_root = [z for z in structure.latent_ids if z != structure.root_id]
        return cls(
            total_weight=0.0,
            loglik=0.0,
            root_state1=0.0,
            edge_counts={z: np.zeros((2, 2)) for z in non_root},
            leaf_weight=np.zeros((V, 2)),
            leaf_wsum=np.zeros((V, 2)),
            leaf_wsum2=np.zeros((V, 2)),
        )

    def merge(self, other: "SufficientStats") -> None:
        self.total_weight += other.total_weight
        self.loglik += other.loglik
        self.root_state1 += other.root_state1
        for z, t in other.edge_counts.items():
            self.edge_counts[z] += t
        self.leaf_weight += other.leaf_weight
        self.leaf_wsum += other.leaf_wsum
        self.leaf_wsum2 += other.leaf_wsum2

    def scaled(self, factor: float) -> "SufficientStats":
        return SufficientStats(
            total_weight=self.total_weight * factor,
            loglik=self.loglik * factor,
            root_state1=self.root_state1 * factor,
            edge_counts={z: t * factor for z, t in self.edge_counts.items()},
            leaf_weight=self.leaf_weight * factor,
            leaf_wsum=self.leaf_wsum * factor,
            leaf_wsum2=self.leaf_wsum2 * factor,
        )

    def normalized(self) -> "SufficientStats":
        """Statistics rescaled to total weight 1 (per-document units)."""
        if self.total_weight <= 0:
            raise ValueError("cannot normalize empty statistics")
        return self.scaled(1.0 / self.total_weight)

    def blend(self, other: "SufficientStats", eta: float) -> "SufficientStats":
        """(1 - eta) * self + eta * other, fieldwise."""
        a, b = self.scaled(1.0 - eta), other.scaled(eta)
        a.merge(b)
        return a


def _accumulate(
    stats: SufficientStats,
    structure: TreeStructure,
    post: BatchPosteriors,
    rf: np.ndarray,
) -> None:
    B = rf.shape[0]
    stats.total_weight += B
    stats.loglik += float(post.loglik.sum())
    stats.root_state1 += float(post.marginals[structure.root_id].sum())
    for z, table in post.pairwise.items():
        stats.edge_counts[z] += table.sum(axis=0)
    pm = np.empty_like(rf)
    for z in structure.leaf_parents:
        idx = structure.leaf_children[z]
        pm[:, idx] = post.marginals[z][:, None]
    for state, w in ((1, pm), (0, 1.0 - pm)):
        stats.leaf_weight[:, state] += w.sum(axis=0)
        stats.leaf_wsum[:, state] += (w * rf).sum(axis=0)
        stats.leaf_wsum2[:, state] += (w * rf * rf).sum(axis=0)


def _estep_serial(model: HltmcModel, rf: np.ndarray, chunk_size: int) -> SufficientStats:
    structure = model.structure
    stats = SufficientStats.zeros(structure)
    for start in range(0, rf.shape[0], chunk_size):
        block = rf[start : start + chunk_size]
        ld = leaf_log_densities(model.params, block)
        _, post = _pass(model, ld, want_posteriors=True)
        _accumulate(stats, structure, post, block)
    return stats


def e_step(
    model: HltmcModel, rf: np.ndarray, chunk_size: int = 4096, workers: int = 1
) -> SufficientStats:
    """Expected sufficient statistics of a batch of relative-frequency rows.

    With ``workers > 1`` the rows are split into contiguous blocks
    processed in parallel and merged in block order, so results are
    reproducible for a fixed worker count.
    """
    rf = np.atleast_2d(np.asarray(rf, dtype=np.float64))
    blocks = split_chunks(rf.shape[0], max(1, workers))
    if len(blocks) <= 1 or workers <= 1:
        return _estep_serial(model, rf, chunk_size)
    parts = map_chunks(
        partial(_estep_worker, model, chunk_size),
        [rf[b.start : b.stop] for b in blocks],
        workers,
    )
    stats = SufficientStats.zeros(model.structure)
    for part in parts:
        stats.merge(part)
    return stats


def _estep_worker(model: HltmcModel, chunk_size: int, rf: np.ndarray) -> SufficientStats:
    return _estep_serial(model, rf, chunk_size)


def m_step(
    stats: SufficientStats, sigma_floor: float, prev: ParamSet
) -> ParamSet:
    """Closed-form maximizer given expected counts.

    Zero-weight CPT rows and zero-weight leaf states inherit the previous
    parameters instead of resetting, so rare states never produce NaNs.
    """
    if stats.total_weight <= 0:
        raise ValueError("m_step requires positive total weight")
    root_prior = float(np.clip(stats.root_state1 / stats.total_weight, 0.0, 1.0))

    cpts = {}
    for z, table in stats.edge_counts.items():
        rows = np.array(prev.cpts[z], dtype=np.float64)
        sums = table.sum(axis=1)
        for u in (0, 1):
            if sums[u] > 0:
                rows[u] = table[u] / sums[u]
        cpts[z] = rows

    w = stats.leaf_weight
    seen = w > 0
    means = np.array(prev.means, dtype=np.float64)
    stdevs = np.array(prev.stdevs, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = stats.leaf_wsum / w
        var = stats.leaf_wsum2 / w - mu * mu
    means[seen] = mu[seen]
    stdevs[seen] = np.sqrt(np.maximum(var[seen], 0.0))
    stdevs = np.maximum(stdevs, sigma_floor)
    return ParamSet(root_prior=root_prior, cpts=cpts, means=means, stdevs=stdevs)


def random_init(
    structure: TreeStructure,
    rf: np.ndarray,
    seed: int,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> ParamSet:
    """Random restart anchored at the corpus moments.

    Means start at the per-word corpus mean perturbed by a uniform
    (0.5, 1.5) factor per state; standard deviations start at the corpus
    standard deviation clamped to the floor. Priors and CPT rows come
    from normalized uniform (0.2, 0.8) draws.
    """
    rng = np.random.default_rng(seed)
    rf = np.atleast_2d(np.asarray(rf, dtype=np.float64))
    V = structure.n_leaves
    if rf.shape[1] != V:
        raise DataError("relative-frequency matrix width does not match leaf count")

    u = rng.uniform(0.2, 0.8, size=2)
    root_prior = float(u[1] / u.sum())
    cpts = {}
    for z in structure.latent_ids:
        if z == structure.root_id:
            continue
        rows = rng.uniform(0.2, 0.8, size=(2, 2))
        cpts[z] = rows / rows.sum(axis=1, keepdims=True)

    col_mean = rf.mean(axis=0)
    col_std = np.maximum(rf.std(axis=0), sigma_floor)
    means = col_mean[:, None] * rng.uniform(0.5, 1.5, size=(V, 2))
    stdevs = np.repeat(col_std[:, None], 2, axis=1)
    return ParamSet(root_prior=root_prior, cpts=cpts, means=means, stdevs=stdevs)


def relabel_states(model: HltmcModel) -> HltmcModel:
    """Orient each latent so state 1 is the high-activity ("topic") state.

    Latents with leaf children flip when their leaves' state-1 means sum
    below the state-0 means. Latents with only latent children orient,
    bottom-up, toward agreement with their already-oriented children
    (state 1 should make children's state 1 more likely). Flips swap the
    latent's CPT columns, its children's CPT rows, and its leaves' state
    parameters; the likelihood is unchanged.
    """
    structure, params = model.structure, model.params
    flip: dict[str, bool] = {}
    for z in reversed(structure.latent_ids):
        idx = structure.leaf_children[z]
        if idx.size:
            flip[z] = float(params.means[idx, 1].sum()) < float(params.means[idx, 0].sum())
        else:
            score = np.zeros(2)
            for c in structure.latent_children[z]:
                col = 0 if flip[c] else 1
                score += params.cpts[c][:, col]
            flip[z] = score[1] < score[0]

    root_prior = params.root_prior
    if flip[structure.root_id]:
        root_prior = 1.0 - root_prior
    cpts = {}
    for z in structure.latent_ids:
        if z == structure.root_id:
            continue
        table = np.array(params.cpts[z])
        if flip[structure.by_id[z].parent]:
            table = table[::-1, :]
        if flip[z]:
            table = table[:, ::-1]
        cpts[z] = table
    means = np.array(params.means)
    stdevs = np.array(params.stdevs)
    for z in structure.leaf_parents:
        if flip[z]:
            idx = structure.leaf_children[z]
            means[idx] = means[idx][:, ::-1]
            stdevs[idx] = stdevs[idx][:, ::-1]
    return HltmcModel(
        structure=structure,
        params=ParamSet(root_prior=root_prior, cpts=cpts, means=means, stdevs=stdevs),
    )


@dataclass
class FitResult:
    params: ParamSet
    trace: list[float]  # per-document log-likelihood at each E step
    converged: bool
    wall_times: list[float]  # seconds elapsed at each trace point


def _em_run(
    structure: TreeStructure,
    params: ParamSet,
    rf: np.ndarray,
    config: FitConfig,
    workers: int,
) -> FitResult:
    D = rf.shape[0]
    start = time.perf_counter()
    trace: list[float] = []
    wall: list[float] = []
    converged = False
    prev_ll: Optional[float] = None
    for it in range(config.max_iters):
        stats = e_step(HltmcModel(structure, params), rf, workers=workers)
        ll = stats.loglik / D
        trace.append(ll)
        wall.append(time.perf_counter() - start)
        if prev_ll is not None and abs(ll - prev_ll) < config.tol * max(1.0, abs(prev_ll)):
            converged = True
            break
        if it == config.max_iters - 1:
            break
        params = m_step(stats, config.sigma_floor, prev=params)
        prev_ll = ll
    return FitResult(params=params, trace=trace, converged=converged, wall_times=wall)


def _restart_inits(
    structure: TreeStructure,
    init: Optional[ParamSet],
    rf: np.ndarray,
    config: FitConfig,
):
    for k in range(config.n_restarts):
        if k == 0 and init is not None:
            yield init
        else:
            yield random_init(structure, rf, seed=config.seed + k, sigma_floor=config.sigma_floor)


def em_fit(
    structure: TreeStructure,
    init: Optional[ParamSet],
    rf: np.ndarray,
    config: FitConfig = FitConfig(),
    workers: int = 1,
) -> FitResult:
    """Full-batch EM, best of ``config.n_restarts`` runs, states relabeled.

    The trace records the per-document log-likelihood at the parameters
    of each iteration before they are updated, so it is non-decreasing.
    """
    rf = np.atleast_2d(np.asarray(rf, dtype=np.float64))
    if rf.shape[0] < 1:
        raise DataError("need at least one document")
    best: Optional[FitResult] = None
    for params0 in _restart_inits(structure, init, rf, config):
        run = _em_run(structure, params0, rf, config, workers)
        if best is None or run.trace[-1] > best.trace[-1]:
            best = run
    relabeled = relabel_states(HltmcModel(structure, best.params))
    return FitResult(
        params=relabeled.params,
        trace=best.trace,
        converged=best.converged,
        wall_times=best.wall_times,
    )


def _stepwise_run(
    structure: TreeStructure,
    params: ParamSet,
    rf: np.ndarray,
    config: FitConfig,
    workers: int,
) -> FitResult:
    D = rf.shape[0]
    m = min(config.minibatch_size, D)
    rng = np.random.default_rng(config.seed)
    start_t = time.perf_counter()
    running: Optional[SufficientStats] = None
    trace: list[float] = []
    wall: list[float] = []
    converged = False
    t = 0
    for _ in range(config.epochs):
        order = rng.permutation(D)
        for start in range(0, D, m):
            batch = rf[order[start : start + m]]
            stats = e_step(HltmcModel(structure, params), batch, workers=workers).normalized()
            if running is None:
                running = stats  # seeded from the first minibatch's E step
            eta = float(t + 2) ** (-config.step_exponent)
            running = running.blend(stats, eta)
            params = m_step(running, config.sigma_floor, prev=params)
            t += 1
        ll = float(
            np.mean(
                _pass(
                    HltmcModel(structure, params),
                    leaf_log_densities(params, rf),
                )[0]
            )
        )
        trace.append(ll)
        wall.append(time.perf_counter() - start_t)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.tol * max(
            1.0, abs(trace[-2])
        ):
            converged = True
            break
    return FitResult(params=params, trace=trace, converged=converged, wall_times=wall)


def stepwise_em_fit(
    structure: TreeStructure,
    init: Optional[ParamSet],
    rf: np.ndarray,
    config: FitConfig = FitConfig(),
    workers: int = 1,
) -> FitResult:
    """Stepwise EM with interpolated per-document statistics.

    Minibatches come from a seeded shuffle per epoch; the running
    statistics are seeded from the first minibatch's E step and updated
    with step size (t + 2) ** -step_exponent. The trace holds one full-
    corpus per-document log-likelihood per epoch (evaluated after the
    epoch's updates, so it is diagnostic rather than monotone).
    """
    rf = np.atleast_2d(np.asarray(rf, dtype=np.float64))
    if rf.shape[0] < 1:
        raise DataError("need at least one document")
    best: Optional[FitResult] = None
    for params0 in _restart_inits(structure, init, rf, config):
        run = _stepwise_run(structure, params0, rf, config, workers)
        if best is None or run.trace[-1] > best.trace[-1]:
            best = run
    relabeled = relabel_states(HltmcModel(structure, best.params))
    return FitResult(
        params=relabeled.params,
        trace=best.trace,
        converged=best.converged,
        wall_times=best.wall_times,
    )
