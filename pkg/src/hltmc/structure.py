"""Tree skeletons: import from file, or build one from co-occurrence data.

The builder is a deliberately simple stand-in: greedy agglomeration of
word groups by empirical mutual information of presence indicators, with
each latent represented, during the recursion, by the union indicator of
its children's columns. Importing an externally learned structure file
is the high-fidelity path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

from .corpus import CountCorpus, Vocabulary
from .errors import DataError
from .model import LATENT, LEAF, Node, TreeStructure, _structural_violations

DEFAULT_GROUP_SIZE = 7


@dataclass(frozen=True)
class BinaryCorpus:
    """Word-presence view of a corpus: one set of vocabulary indices per document."""

    vocab: Vocabulary
    docs: tuple[frozenset[int], ...]

    def __post_init__(self):
        V = len(self.vocab)
        for j, s in enumerate(self.docs):
            if any(i < 0 or i >= V for i in s):
                raise DataError(f"document {j}: word index out of range")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @cached_property
    def postings(self) -> tuple[frozenset[int], ...]:
        """Per word, the set of documents containing it."""
        acc: list[set[int]] = [set() for _ in range(len(self.vocab))]
        for j, s in enumerate(self.docs):
            for i in s:
                acc[i].add(j)
        return tuple(frozenset(s) for s in acc)


def binarize(corpus: CountCorpus) -> BinaryCorpus:
    """Presence indicator per word per document (count >= 1)."""
    return BinaryCorpus(
        vocab=corpus.vocab,
        docs=tuple(frozenset(int(i) for i in d.indices) for d in corpus.docs),
    )


def _mi_from_counts(n11: int, n1: int, n2: int, n_docs: int) -> float:
    """MI of two indicators from co-occurrence counts, 0.5 smoothing per cell."""
    cells = [
        n11 + 0.5,
        n1 - n11 + 0.5,
        n2 - n11 + 0.5,
        n_docs - n1 - n2 + n11 + 0.5,
    ]
    total = n_docs + 2.0
    p11, p10, p01, p00 = (c / total for c in cells)
    prow = (p11 + p10, p01 + p00)
    pcol = (p11 + p01, p10 + p00)
    mi = 0.0
    for p, pr, pc in (
        (p11, prow[0], pcol[0]),
        (p10, prow[0], pcol[1]),
        (p01, prow[1], pcol[0]),
        (p00, prow[1], pcol[1]),
    ):
        mi += p * math.log(p / (pr * pc))
    return max(mi, 0.0)


def pairwise_mi(corpus: BinaryCorpus, i: int, j: int) -> float:
    """Empirical mutual information of two word-presence indicators, in nats."""
    if corpus.n_docs == 0:
        raise DataError("empty corpus")
    post = corpus.postings
    n11 = len(post[i] & post[j]) if i != j else len(post[i])
    return _mi_from_counts(n11, len(post[i]), len(post[j]), corpus.n_docs)


def _mi_matrix(postings: Sequence[frozenset[int]], n_docs: int) -> list[list[float]]:
    n = len(postings)
    mat = [[0.0] * n for _ in range(n)]
    sizes = [len(p) for p in postings]
    for i in range(n):
        for j in range(i + 1, n):
            m = _mi_from_counts(len(postings[i] & postings[j]), sizes[i], sizes[j], n_docs)
            mat[i][j] = m
            mat[j][i] = m
    return mat


def _greedy_groups(postings: Sequence[frozenset[int]], n_docs: int, group_size: int) -> list[list[int]]:
    """Greedy agglomeration: seed with the highest-MI unassigned pair, grow by
    highest average MI to the group. Ties break toward smaller indices."""
    n = len(postings)
    mi = _mi_matrix(postings, n_docs)
    unassigned = set(range(n))
    groups: list[list[int]] = []
    while unassigned:
        if len(unassigned) == 1:
            groups.append([unassigned.pop()])
            break
        remaining = sorted(unassigned)
        best_pair, best_val = None, -1.0
        for ai, i in enumerate(remaining):
            for j in remaining[ai + 1 :]:
                if mi[i][j] > best_val:
                    best_pair, best_val = (i, j), mi[i][j]
        group = list(best_pair)
        unassigned -= set(group)
        while len(group) < group_size and unassigned:
            best_k, best_avg = None, -1.0
            for k in sorted(unassigned):
                avg = sum(mi[k][g] for g in group) / len(group)
                if avg > best_avg:
                    best_k, best_avg = k, avg
            group.append(best_k)
            unassigned.remove(best_k)
        groups.append(group)
    return groups


def build_structure(
    corpus: BinaryCorpus,
    vocab: Vocabulary,
    group_size: int = DEFAULT_GROUP_SIZE,
    seed: int = 0,
) -> TreeStructure:
    """Build a latent tree by repeated mutual-information grouping.

    Level-1 latents parent word groups; above that, each latent is
    represented by the union indicator of its children and the grouping
    repeats until at most ``group_size`` nodes remain, which get a single
    root. Fully deterministic (ties break by smallest index); ``seed`` is
    accepted for interface stability but unused.
    """
    del seed
    V = len(vocab)
    if V != len(corpus.vocab):
        raise DataError("vocabulary does not match the corpus")
    if V < 2:
        raise DataError("need at least 2 words to build a structure")
    if group_size < 2:
        raise ValueError("group size must be >= 2")

    nodes: list[Node] = [
        Node(id=f"w{i}", kind=LEAF, parent=None, word_index=i) for i in range(V)
    ]
    parent_of: dict[str, str] = {}

    units: list[tuple[str, frozenset[int]]] = [
        (f"w{i}", corpus.postings[i]) for i in range(V)
    ]
    level = 1
    while True:
        groups = _greedy_groups([p for _, p in units], corpus.n_docs, group_size)
        new_units: list[tuple[str, frozenset[int]]] = []
        for k, group in enumerate(groups):
            zid = f"z{level}_{k}"
            members = [units[g] for g in group]
            for mid, _ in members:
                parent_of[mid] = zid
            merged = frozenset().union(*(p for _, p in members))
            new_units.append((zid, merged))
            nodes.append(Node(id=zid, kind=LATENT, parent=None))
        units = new_units
        if len(units) == 1:
            break
        if len(units) <= group_size:
            root_id = f"z{level + 1}_0"
            for uid, _ in units:
                parent_of[uid] = root_id
            nodes.append(Node(id=root_id, kind=LATENT, parent=None))
            break
        level += 1

    finished = tuple(
        Node(id=n.id, kind=n.kind, parent=parent_of.get(n.id), word_index=n.word_index)
        for n in nodes
    )
    return TreeStructure(nodes=finished)


# ---------------------------------------------------------------------------
# structure files: one node per line, `id parent|- latent|leaf [word]`
# ---------------------------------------------------------------------------


def save_structure(structure: TreeStructure, vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id\tparent\tkind\t[word]\n")
        for n in structure.nodes:
            parent = n.parent if n.parent is not None else "-"
            if n.is_leaf():
                fh.write(f"{n.id}\t{parent}\t{LEAF}\t{vocab.words[n.word_index]}\n")
            else:
                fh.write(f"{n.id}\t{parent}\t{LATENT}\n")


def load_structure(path, vocab: Vocabulary) -> TreeStructure:
    """Parse a structure file against a vocabulary and verify tree-ness.

    Leaf lines carry the word string (which may itself contain spaces);
    every vocabulary word must appear exactly once. Parse problems are
    reported with their line number, structural problems by node.
    """
    nodes: list[Node] = []
    seen_words: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 3)
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected 'id parent kind [word]'")
            nid, parent, kind = parts[0], parts[1], parts[2]
            parent_id = None if parent == "-" else parent
            if kind == LEAF:
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: leaf line must name its word")
                word = parts[3].strip()
                if word not in vocab:
                    raise DataError(f"{path}:{lineno}: unknown word {word!r}")
                if word in seen_words:
                    raise DataError(
                        f"{path}:{lineno}: word {word!r} already used on line {seen_words[word]}"
                    )
                seen_words[word] = lineno
                nodes.append(
                    Node(id=nid, kind=LEAF, parent=parent_id, word_index=vocab.index[word])
                )
            elif kind == LATENT:
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: latent line carries extra fields")
                nodes.append(Node(id=nid, kind=LATENT, parent=parent_id))
            else:
                raise DataError(f"{path}:{lineno}: unknown kind {kind!r}")
    missing = [w for w in vocab.words if w not in seen_words]
    if missing:
        raise DataError(f"{path}: structure misses vocabulary words {missing[:5]}")
    structure = TreeStructure(nodes=tuple(nodes))
    violations = _structural_violations(structure)
    if violations:
        raise DataError(f"{path}: not a valid tree: " + "; ".join(violations))
    return structure
