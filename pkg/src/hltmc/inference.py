"""Exact inference on the latent tree with Gaussian leaf evidence.

Implements one upward-downward message pass, vectorized over a batch of
documents: document log-likelihoods, posterior node marginals, pairwise
parent-child posteriors, prior marginals, and the joint prior probability
of an assignment to all leaf-parent latents. All arithmetic is in log
space; upward messages are optionally renormalized per node (subtracting
the per-document maximum) with the subtracted scale tracked separately,
so results do not depend on the renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .densities import normal_logpdf
from .errors import DataError
from .model import HltmcModel, ParamSet, TreeStructure

_MAX_BRUTE_FORCE_LATENTS = 16


@dataclass
class PosteriorMarginals:
    """Posterior over the latents of one document.

    ``marginals[z]`` is P(z = 1 | evidence). ``pairwise[z][u, v]`` is
    P(parent(z) = u, z = v | evidence) for every non-root latent z; each
    table sums to 1 and its margins agree with the node marginals.
    """

    marginals: dict[str, float]
    pairwise: dict[str, np.ndarray]
    loglik: float


@dataclass
class BatchPosteriors:
    """Same content as :class:`PosteriorMarginals`, batched over documents."""

    marginals: dict[str, np.ndarray]  # id -> (B,)
    pairwise: dict[str, np.ndarray]  # id -> (B, 2, 2)
    loglik: np.ndarray  # (B,)


def leaf_log_densities(params: ParamSet, rf: np.ndarray) -> np.ndarray:
    """(B, V) observations -> (B, V, 2) Gaussian log densities per parent state."""
    rf = np.asarray(rf, dtype=np.float64)
    return normal_logpdf(rf[:, :, None], params.means[None, :, :], params.stdevs[None, :, :])


def _log_root_prior(params: ParamSet) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray([1.0 - params.root_prior, params.root_prior]))


def _log_cpt(params: ParamSet, z: str) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(params.cpts[z])


def _upward(
    structure: TreeStructure,
    params: ParamSet,
    leaf_ld: Optional[np.ndarray],
    evidence: Optional[Mapping[str, np.ndarray]],
    batch: int,
    renormalize: bool = True,
):
    """Bottom-up pass.

    Returns per-latent subtree log-likelihoods ``log_beta[z]`` of shape
    (B, 2), the child-to-parent messages, base terms (leaf evidence plus
    latent evidence masks) and the accumulated renormalization scale.
    """
    log_beta: dict[str, np.ndarray] = {}
    base: dict[str, np.ndarray] = {}
    msgs: dict[str, np.ndarray] = {}
    scale = np.zeros(batch)
    rows = np.arange(batch)
    for z in reversed(structure.latent_ids):
        lb = np.zeros((batch, 2))
        idx = structure.leaf_children[z]
        if leaf_ld is not None and idx.size:
            lb = lb + leaf_ld[:, idx, :].sum(axis=1)
        if evidence is not None and z in evidence:
            vals = np.asarray(evidence[z], dtype=np.int64)
            if vals.shape != (batch,):
                raise ValueError(f"evidence for {z} must have shape ({batch},)")
            lb[rows, 1 - vals] = -np.inf
        base[z] = lb
        for c in structure.latent_children[z]:
            lb = lb + msgs[c]
        if renormalize:
            mx = np.max(lb, axis=1)
            shift = np.where(np.isfinite(mx), mx, 0.0)
            lb = lb - shift[:, None]
            scale = scale + mx
        log_beta[z] = lb
        if z != structure.root_id:
            # message to the parent: logsumexp over this node's own state
            msgs[z] = logsumexp(lb[:, None, :] + _log_cpt(params, z)[None, :, :], axis=2)
    return log_beta, base, msgs, scale


def _pass(
    model: HltmcModel,
    leaf_ld: Optional[np.ndarray],
    evidence: Optional[Mapping[str, np.ndarray]] = None,
    batch: Optional[int] = None,
    want_posteriors: bool = False,
    renormalize: bool = True,
):
    structure, params = model.structure, model.params
    if batch is None:
        batch = leaf_ld.shape[0] if leaf_ld is not None else 1
    log_beta, base, msgs, scale = _upward(
        structure, params, leaf_ld, evidence, batch, renormalize
    )
    log_prior = _log_root_prior(params)
    loglik = scale + logsumexp(log_prior[None, :] + log_beta[structure.root_id], axis=1)
    if not want_posteriors:
        return loglik, None

    # top-down pass; per-node additive constants cancel in the normalizations
    log_alpha: dict[str, np.ndarray] = {
        structure.root_id: np.broadcast_to(log_prior, (batch, 2))
    }
    marg_log: dict[str, np.ndarray] = {}
    pair: dict[str, np.ndarray] = {}
    for z in structure.latent_ids:
        lm = log_alpha[z] + log_beta[z]
        marg_log[z] = lm - logsumexp(lm, axis=1, keepdims=True)
        kids = structure.latent_children[z]
        if not kids:
            continue
        # exclusion sums: base terms plus messages from all other children,
        # via prefix/suffix sums to stay O(#children)
        stack = [msgs[c] for c in kids]
        prefix = [np.zeros((batch, 2))]
        for m in stack[:-1]:
            prefix.append(prefix[-1] + m)
        suffix = [np.zeros((batch, 2))]
        for m in reversed(stack[1:]):
            suffix.append(suffix[-1] + m)
        suffix.reverse()
        for j, c in enumerate(kids):
            excl = base[z] + prefix[j] + suffix[j]
            head = (log_alpha[z] + excl)[:, :, None] + _log_cpt(params, c)[None, :, :]
            log_alpha[c] = logsumexp(head, axis=1)
            pl = head + log_beta[c][:, None, :]
            pair[c] = pl - logsumexp(pl, axis=(1, 2), keepdims=True)
    marginals = {z: np.exp(m[:, 1]) for z, m in marg_log.items()}
    pairwise = {c: np.exp(p) for c, p in pair.items()}
    return loglik, BatchPosteriors(marginals=marginals, pairwise=pairwise, loglik=loglik)


def _check_observation(model: HltmcModel, rf: np.ndarray) -> np.ndarray:
    rf = np.atleast_2d(np.asarray(rf, dtype=np.float64))
    V = model.structure.n_leaves
    if rf.shape[1] != V:
        raise DataError(f"observation has {rf.shape[1]} entries, model has {V} leaves")
    if not np.all(np.isfinite(rf)):
        raise DataError("observation contains non-finite entries")
    return rf


def loglik_docs(model: HltmcModel, rf: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """Log-likelihood of each row of ``rf`` (D, V) under the Gaussian-leaf reading."""
    rf = _check_observation(model, rf)
    ld = leaf_log_densities(model.params, rf)
    loglik, _ = _pass(model, ld, renormalize=renormalize)
    return loglik


def loglik_doc(model: HltmcModel, rf: np.ndarray, renormalize: bool = True) -> float:
    """Log-likelihood of one relative-frequency observation of all leaves."""
    return float(loglik_docs(model, rf, renormalize=renormalize)[0])


def posteriors_batch(model: HltmcModel, rf: np.ndarray, renormalize: bool = True) -> BatchPosteriors:
    """Posterior marginals and pairwise tables for each row of ``rf``."""
    rf = _check_observation(model, rf)
    ld = leaf_log_densities(model.params, rf)
    _, post = _pass(model, ld, want_posteriors=True, renormalize=renormalize)
    return post


def posteriors(model: HltmcModel, rf: np.ndarray, renormalize: bool = True) -> PosteriorMarginals:
    """Posterior marginals and pairwise tables for one document."""
    post = posteriors_batch(model, rf, renormalize=renormalize)
    return PosteriorMarginals(
        marginals={z: float(m[0]) for z, m in post.marginals.items()},
        pairwise={z: p[0] for z, p in post.pairwise.items()},
        loglik=float(post.loglik[0]),
    )


def prior_marginals(model: HltmcModel) -> dict[str, float]:
    """P(z = 1) for every latent, by propagating the root prior downward."""
    structure, params = model.structure, model.params
    out = {structure.root_id: float(params.root_prior)}
    for z in structure.latent_ids:
        p1 = out[z]
        for c in structure.latent_children[z]:
            cpt = params.cpts[c]
            out[c] = float((1.0 - p1) * cpt[0, 1] + p1 * cpt[1, 1])
    return out


def level1_joint_logprob_batch(
    model: HltmcModel, ids: Sequence[str], assignments: np.ndarray
) -> np.ndarray:
    """Log prior probability of joint assignments to the leaf-parent latents.

    ``assignments`` has one row per assignment and one 0/1 column per id
    in ``ids``; upper latents are summed out by message passing.
    """
    expected = set(model.structure.leaf_parents)
    if set(ids) != expected or len(ids) != len(expected):
        raise DataError(
            f"assignment must cover exactly the leaf-parent latents {sorted(expected)}"
        )
    assignments = np.atleast_2d(np.asarray(assignments, dtype=np.int64))
    if assignments.shape[1] != len(ids):
        raise DataError("assignment width does not match id count")
    evidence = {z: assignments[:, j] for j, z in enumerate(ids)}
    loglik, _ = _pass(model, None, evidence=evidence, batch=assignments.shape[0])
    return loglik


def level1_joint_prob(model: HltmcModel, assignment: Mapping[str, int]) -> float:
    """Prior probability of one joint assignment to all leaf-parent latents."""
    ids = tuple(sorted(assignment))
    row = np.asarray([[assignment[z] for z in ids]])
    return float(np.exp(level1_joint_logprob_batch(model, ids, row)[0]))


def brute_force_loglik(model: HltmcModel, rf: np.ndarray) -> float:
    """Explicit sum over all latent configurations; test oracle only.

    Exponential in the latent count; refuses more than
    ``_MAX_BRUTE_FORCE_LATENTS`` latents.
    """
    structure, params = model.structure, model.params
    latents = structure.latent_ids
    L = len(latents)
    if L > _MAX_BRUTE_FORCE_LATENTS:
        raise ValueError(f"too many latents for brute force: {L}")
    rf = _check_observation(model, rf)
    if rf.shape[0] != 1:
        raise ValueError("brute force handles one document at a time")
    ld = leaf_log_densities(params, rf)[0]  # (V, 2)

    pos = {z: j for j, z in enumerate(latents)}
    configs = np.indices((2,) * L).reshape(L, -1).T  # (2^L, L)
    log_joint = _log_root_prior(params)[configs[:, 0]]
    for z in latents[1:]:
        u = configs[:, pos[structure.by_id[z].parent]]
        v = configs[:, pos[z]]
        log_joint = log_joint + _log_cpt(params, z)[u, v]
    word_parent_pos = np.asarray(
        [pos[structure.word_parent[i]] for i in range(structure.n_leaves)]
    )
    parent_vals = configs[:, word_parent_pos]  # (2^L, V)
    leaf_terms = np.take_along_axis(ld.T, parent_vals, axis=0).sum(axis=1)
    return float(logsumexp(log_joint + leaf_terms))
