"""Core model data types: tree skeleton, parameters, validation, serialization.

A model couples a rooted tree of binary latent nodes over word leaves
(``TreeStructure``) with one shared parameter container (``ParamSet``).
The same parameters serve two evaluation modes: leaf emissions read as
normals truncated to [0, 1] during generation, and as plain normals
during inference and learning. Mode is a property of the consuming
operation, not of the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Vocabulary
from .errors import DataError

DEFAULT_SIGMA_FLOOR = 1e-4

LATENT = "latent"
LEAF = "leaf"

MODEL_FORMAT = "hltmc-model"
MODEL_FORMAT_VERSION = 1

# CPT rows are renormalized on load when their sums drift by no more than
# this; larger drift is rejected as corrupt data.
_ROW_SUM_LOAD_TOL = 1e-6
_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Node:
    """One tree node. Leaves carry the vocabulary index of their word."""

    id: str
    kind: str  # LATENT or LEAF
    parent: Optional[str]  # None marks the root
    word_index: Optional[int] = None

    def is_leaf(self) -> bool:
        return self.kind == LEAF


@dataclass(frozen=True)
class TreeStructure:
    """Rooted tree of binary latent nodes with word leaves.

    The derived helpers below assume a structurally valid tree; run
    :func:`validate_model` first on untrusted input. Node levels are
    derived (leaves at 0, a latent one above its highest child), not
    stored, so they cannot contradict the topology.
    """

    nodes: tuple[Node, ...]

    @cached_property
    def by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def root_id(self) -> str:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise DataError(f"structure must have exactly one root, found {len(roots)}")
        return roots[0]

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None:
                out[n.parent].append(n.id)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def latent_ids(self) -> tuple[str, ...]:
        """All latent ids in topological order, root first."""
        order: list[str] = []
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            node = self.by_id[nid]
            if node.is_leaf():
                continue
            order.append(nid)
            stack.extend(reversed(self.children[nid]))
        return tuple(order)

    @cached_property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf())

    @cached_property
    def levels(self) -> dict[str, int]:
        lv: dict[str, int] = {n.id: 0 for n in self.nodes if n.is_leaf()}
        for nid in reversed(self.latent_ids):
            lv[nid] = 1 + max(lv[c] for c in self.children[nid])
        return lv

    @cached_property
    def leaf_children(self) -> dict[str, np.ndarray]:
        """Latent id -> sorted vocabulary indices of its direct leaf children."""
        out: dict[str, np.ndarray] = {}
        for nid in self.latent_ids:
            idx = sorted(
                self.by_id[c].word_index
                for c in self.children[nid]
                if self.by_id[c].is_leaf()
            )
            out[nid] = np.asarray(idx, dtype=np.int64)
        return out

    @cached_property
    def latent_children(self) -> dict[str, tuple[str, ...]]:
        """Latent id -> its latent children, in node order."""
        return {
            z: tuple(c for c in self.children[z] if not self.by_id[c].is_leaf())
            for z in self.latent_ids
        }

    @cached_property
    def leaf_parents(self) -> tuple[str, ...]:
        """Latents that directly parent at least one leaf, in topological order."""
        return tuple(z for z in self.latent_ids if self.leaf_children[z].size > 0)

    @cached_property
    def word_parent(self) -> dict[int, str]:
        """Vocabulary index -> id of the latent parenting that leaf."""
        out: dict[int, str] = {}
        for z, idx in self.leaf_children.items():
            for i in idx:
                out[int(i)] = z
        return out

    def subtree_word_indices(self, latent_id: str) -> np.ndarray:
        """Sorted vocabulary indices of all leaves below ``latent_id``."""
        if latent_id not in self.by_id or self.by_id[latent_id].is_leaf():
            raise DataError(f"unknown latent id {latent_id!r}")
        found: list[int] = []
        stack = [latent_id]
        while stack:
            nid = stack.pop()
            node = self.by_id[nid]
            if node.is_leaf():
                found.append(node.word_index)
            else:
                stack.extend(self.children[nid])
        return np.asarray(sorted(found), dtype=np.int64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Shared parameters: root prior, per-latent CPTs, per-leaf emission moments.

    ``cpts[z][u, v]`` is P(z = v | parent(z) = u) for every non-root
    latent z. ``means[i, z]`` / ``stdevs[i, z]`` are the emission mean
    and standard deviation of leaf i when its parent takes value z.
    """

    root_prior: float
    cpts: Mapping[str, np.ndarray]
    means: np.ndarray
    stdevs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "root_prior", float(self.root_prior))
        object.__setattr__(
            self, "cpts", {k: _readonly(v) for k, v in self.cpts.items()}
        )
        object.__setattr__(self, "means", _readonly(self.means))
        object.__setattr__(self, "stdevs", _readonly(self.stdevs))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return (
            self.root_prior == other.root_prior
            and set(self.cpts) == set(other.cpts)
            and all(np.array_equal(self.cpts[k], other.cpts[k]) for k in self.cpts)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.stdevs, other.stdevs)
        )


@dataclass(frozen=True, eq=False)
class HltmcModel:
    """A tree skeleton plus its parameters."""

    structure: TreeStructure
    params: ParamSet

    def __eq__(self, other) -> bool:
        if not isinstance(other, HltmcModel):
            return NotImplemented
        return self.structure == other.structure and self.params == other.params


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]


def _structural_violations(structure: TreeStructure) -> list[str]:
    v: list[str] = []
    nodes = structure.nodes
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        seen, dupes = set(), set()
        for i in ids:
            (dupes if i in seen else seen).add(i)
        v.append(f"duplicate node ids: {sorted(dupes)}")
        return v

    by_id = {n.id: n for n in nodes}
    roots = [n for n in nodes if n.parent is None]
    if len(roots) != 1:
        v.append(f"expected exactly one root, found {len(roots)}")
    for n in nodes:
        if n.parent is not None:
            if n.parent not in by_id:
                v.append(f"node {n.id}: unknown parent {n.parent!r}")
            elif by_id[n.parent].is_leaf():
                v.append(f"node {n.id}: parent {n.parent} is a leaf")
        if n.kind not in (LATENT, LEAF):
            v.append(f"node {n.id}: unknown kind {n.kind!r}")
        if n.is_leaf() and n.word_index is None:
            v.append(f"leaf {n.id}: missing vocabulary index")
        if not n.is_leaf() and n.word_index is not None:
            v.append(f"latent {n.id}: carries a vocabulary index")
    if v:
        return v

    root = roots[0]
    if root.is_leaf():
        v.append(f"root {root.id} is a leaf")
        return v

    # reachability from the root covers both connectivity and acyclicity,
    # since every non-root node has exactly one parent pointer
    children: dict[str, list[str]] = {n.id: [] for n in nodes}
    for n in nodes:
        if n.parent is not None:
            children[n.parent].append(n.id)
    reached = set()
    stack = [root.id]
    while stack:
        nid = stack.pop()
        if nid in reached:
            continue
        reached.add(nid)
        stack.extend(children[nid])
    if len(reached) != len(nodes):
        missing = sorted(set(ids) - reached)
        v.append(f"nodes not reachable from root (cycle or orphan): {missing}")
        return v

    for n in nodes:
        if not n.is_leaf() and not children[n.id]:
            v.append(f"latent {n.id} has no children")

    word_indices = sorted(n.word_index for n in nodes if n.is_leaf())
    n_leaves = len(word_indices)
    if word_indices != list(range(n_leaves)):
        v.append(
            "vocabulary index bijection broken: leaf indices "
            f"{word_indices} != 0..{n_leaves - 1}"
        )
    return v


def validate_model(
    structure: TreeStructure,
    params: ParamSet,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> ValidationReport:
    """Check every structural and parameter invariant; violations are data, not errors."""
    violations = _structural_violations(structure)
    if violations:
        return ValidationReport(False, violations)

    v: list[str] = []
    if not (0.0 <= params.root_prior <= 1.0):
        v.append(f"root prior {params.root_prior} outside [0, 1]")

    non_root = set(structure.latent_ids) - {structure.root_id}
    missing = non_root - set(params.cpts)
    extra = set(params.cpts) - non_root
    if missing:
        v.append(f"missing CPTs for latents {sorted(missing)}")
    if extra:
        v.append(f"CPTs for unknown or root nodes {sorted(extra)}")
    for z in sorted(non_root & set(params.cpts)):
        table = np.asarray(params.cpts[z], dtype=np.float64)
        if table.shape != (2, 2):
            v.append(f"CPT of {z} has shape {table.shape}, expected (2, 2)")
            continue
        if not np.all(np.isfinite(table)) or np.any(table < 0.0):
            v.append(f"CPT of {z} has negative or non-finite entries")
            continue
        sums = table.sum(axis=1)
        for u in (0, 1):
            if abs(sums[u] - 1.0) > _ROW_SUM_TOL:
                v.append(f"CPT row {u} of {z} sums to {sums[u]!r}, not 1")

    V = structure.n_leaves
    shapes_ok = True
    for name, arr in (("means", params.means), ("stdevs", params.stdevs)):
        if np.asarray(arr).shape != (V, 2):
            v.append(f"{name} has shape {np.asarray(arr).shape}, expected ({V}, 2)")
            shapes_ok = False
    if shapes_ok:
        if not np.all(np.isfinite(params.means)):
            v.append("non-finite leaf means")
        bad = np.argwhere(params.stdevs < sigma_floor)
        for i, z in bad:
            v.append(f"sigma below floor at leaf {i} state {z}")

    n_latents = len(structure.latent_ids)
    n_params = 1 + 2 * (n_latents - 1) + 4 * V
    if n_params > 6 * V:
        v.append(f"parameter count {n_params} exceeds bound {6 * V}")

    return ValidationReport(not v, v)


def count_parameters(model: HltmcModel) -> int:
    """Free scalar parameters: root prior, one per CPT row, four per leaf."""
    n_latents = len(model.structure.latent_ids)
    return 1 + 2 * (n_latents - 1) + 4 * model.structure.n_leaves


def require_valid(model: HltmcModel, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> None:
    report = validate_model(model.structure, model.params, sigma_floor)
    if not report.ok:
        raise DataError("invalid model: " + "; ".join(report.violations))


# ---------------------------------------------------------------------------
# serialization: one self-describing JSON document per model
# ---------------------------------------------------------------------------


def save_model(model: HltmcModel, vocab: Vocabulary, path) -> None:
    """Write structure, parameters and leaf word strings as one JSON document.

    Floats are rendered with ``repr``, which round-trips doubles exactly,
    so ``load_model(save_model(m))`` reproduces ``m`` bit for bit.
    """
    if len(vocab) != model.structure.n_leaves:
        raise DataError(
            f"vocabulary size {len(vocab)} does not match leaf count "
            f"{model.structure.n_leaves}"
        )
    nodes = []
    for n in model.structure.nodes:
        rec: dict = {"id": n.id, "parent": n.parent, "kind": n.kind}
        if n.is_leaf():
            rec["index"] = n.word_index
            rec["word"] = vocab.words[n.word_index]
        nodes.append(rec)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "nodes": nodes,
        "params": {
            "root_prior": model.params.root_prior,
            "cpts": {k: v.tolist() for k, v in model.params.cpts.items()},
            "leaf_means": model.params.means.tolist(),
            "leaf_stdevs": model.params.stdevs.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _renormalized_row(row: np.ndarray, where: str) -> np.ndarray:
    s = float(row.sum())
    if not np.isfinite(s) or abs(s - 1.0) > _ROW_SUM_LOAD_TOL:
        raise DataError(f"{where}: row sums to {s!r}")
    if abs(s - 1.0) > _ROW_SUM_TOL:
        return row / s
    return row


def load_model(path) -> tuple[HltmcModel, Vocabulary]:
    """Read a model document written by :func:`save_model` and validate it."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {doc.get('version')!r}")

    nodes = []
    words: dict[int, str] = {}
    for rec in doc["nodes"]:
        kind = rec["kind"]
        idx = rec.get("index") if kind == LEAF else None
        nodes.append(Node(id=rec["id"], kind=kind, parent=rec["parent"], word_index=idx))
        if kind == LEAF:
            if idx is None or "word" not in rec:
                raise DataError(f"{path}: leaf {rec['id']} lacks word or index")
            words[idx] = rec["word"]
    structure = TreeStructure(nodes=tuple(nodes))

    p = doc["params"]
    cpts = {}
    for z, table in p["cpts"].items():
        arr = np.asarray(table, dtype=np.float64)
        if arr.shape != (2, 2):
            raise DataError(f"{path}: CPT of {z} is not 2x2")
        cpts[z] = np.stack(
            [_renormalized_row(arr[u], f"{path}: CPT of {z} (parent state {u})") for u in (0, 1)]
        )
    params = ParamSet(
        root_prior=float(p["root_prior"]),
        cpts=cpts,
        means=np.asarray(p["leaf_means"], dtype=np.float64),
        stdevs=np.asarray(p["leaf_stdevs"], dtype=np.float64),
    )
    model = HltmcModel(structure=structure, params=params)
    report = validate_model(structure, params)
    if not report.ok:
        raise DataError(f"{path}: invalid model: " + "; ".join(report.violations))
    vocab = Vocabulary(tuple(words[i] for i in range(structure.n_leaves)))
    return model, vocab
