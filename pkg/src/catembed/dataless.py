"""Dataless hierarchical classification over bag-of-entities vectors.

Documents and label descriptions are sparse ``entity -> weight`` vectors.
Their similarity is densified with entity embeddings: entity pairs are
matched one-to-one by the Hungarian method and the matched pair similarities
are averaged.  Labels are chosen at the leaves and propagated to ancestors.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, StructureError
from .textio import iter_lines, split_fields

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 0.85
DEFAULT_DELTA = 0.95
DEFAULT_MAX_ENTRIES = 500


class SparseEsaVector:
    """Deduplicated ``(entity, weight)`` entries, heaviest first, at most ``max_entries``."""

    __slots__ = ("entries",)

    def __init__(self, pairs: Iterable[tuple[str, float]] | Mapping[str, float],
                 max_entries: int | None = DEFAULT_MAX_ENTRIES):
        if isinstance(pairs, Mapping):
            pairs = pairs.items()
        best: dict[str, float] = {}
        for ent, w in pairs:
            w = float(w)
            if not w >= 0 or not math.isfinite(w):
                raise ValueError(f"weight for {ent!r} must be finite and nonnegative, got {w}")
            if w > best.get(ent, -1.0):
                best[ent] = w
        ordered = sorted(best.items(), key=lambda t: (-t[1], t[0]))
        if max_entries is not None:
            ordered = ordered[:max_entries]
        self.entries = tuple(ordered)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, SparseEsaVector) and self.entries == other.entries

    def __repr__(self):
        head = ", ".join(f"{e}:{w:g}" for e, w in self.entries[:4])
        more = ", ..." if len(self.entries) > 4 else ""
        return f"SparseEsaVector({{{head}{more}}})"

    @property
    def entities(self) -> list[str]:
        return [e for e, _ in self.entries]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.entries], dtype=np.float64)

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def format(self) -> str:
        return " ".join(f"{e}:{w!r}" for e, w in self.entries)

    @classmethod
    def parse(cls, text: str, max_entries: int | None = DEFAULT_MAX_ENTRIES) -> "SparseEsaVector":
        pairs = []
        for tok in text.split():
            ent, sep, w = tok.rpartition(":")
            if not sep or not ent:
                raise ValueError(f"bad sparse entry {tok!r}")
            pairs.append((ent, float(w)))
        return cls(pairs, max_entries)


def cosine_sparse(u: SparseEsaVector, v: SparseEsaVector) -> float:
    du, dv = u.as_dict(), v.as_dict()
    nu = math.sqrt(sum(w * w for w in du.values()))
    nv = math.sqrt(sum(w * w for w in dv.values()))
    if nu == 0 or nv == 0:
        raise ValueError("cosine is undefined for an all-zero vector")
    if len(du) > len(dv):
        du, dv = dv, du
    dot = sum(w * dv[e] for e, w in du.items() if e in dv)
    return min(dot / (nu * nv), 1.0)


class EntityVectors:
    """Unit-normalized entity input vectors for fast similarity lookups."""

    def __init__(self, store):
        self.index = dict(store.entity_index)
        mat = np.asarray(store.entity_in, dtype=np.float64)
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        self.unit = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
        self.has = (norms[:, 0] > 0)

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        """Unit vectors for ``ids``; unknown entities get zero rows."""
        idx = np.array([self.index.get(e, -1) for e in ids], dtype=np.int64)
        out = np.zeros((len(ids), self.unit.shape[1]))
        hit = idx >= 0
        out[hit] = self.unit[idx[hit]]
        return out

    @classmethod
    def of(cls, store) -> "EntityVectors":
        return store if isinstance(store, EntityVectors) else cls(store)


def entity_pair_similarity(e1: str, e2: str, store, cutoff: float = DEFAULT_CUTOFF) -> float:
    if e1 == e2:
        return 1.0
    vecs = EntityVectors.of(store)
    i, j = vecs.index.get(e1), vecs.index.get(e2)
    if i is None or j is None or not (vecs.has[i] and vecs.has[j]):
        return 0.0
    s = float(np.clip(vecs.unit[i] @ vecs.unit[j], -1.0, 1.0))
    return s if s >= cutoff else 0.0


def similarity_matrix(left: Sequence[str], right: Sequence[str], store,
                      cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Vectorized :func:`entity_pair_similarity` over two entity lists."""
    vecs = EntityVectors.of(store)
    L = vecs.rows(left)
    R = vecs.rows(right)
    S = np.clip(L @ R.T, -1.0, 1.0)
    S[S < cutoff] = 0.0
    same = np.asarray(left, dtype=object)[:, None] == np.asarray(right, dtype=object)[None, :]
    S[same] = 1.0
    return S


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment for ``n <= m``; returns the column of each row.

    Shortest augmenting paths with row/column potentials, one row at a time.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)   # row (1-based) owning each column, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of[owner[j] - 1] = j - 1
    return col_of


def hungarian_match(score_matrix) -> list[tuple[int, int]]:
    """One-to-one (row, col) pairs of maximum total score, ``min(m, n)`` of them."""
    S = np.asarray(score_matrix, dtype=np.float64)
    if S.size == 0:
        return []
    if S.ndim != 2:
        raise ValueError("score matrix must be two-dimensional")
    if not np.isfinite(S).all():
        raise ValueError("score matrix must be finite")
    transposed = S.shape[0] > S.shape[1]
    M = S.T if transposed else S
    cols = _hungarian_min(M.max() - M)
    pairs = [(r, int(c)) for r, c in enumerate(cols)]
    if transposed:
        pairs = sorted((c, r) for r, c in pairs)
    return pairs


def assignment_value(score_matrix, pairs) -> float:
    S = np.asarray(score_matrix, dtype=np.float64)
    return float(sum(S[r, c] for r, c in pairs))


def densified_similarity(doc: SparseEsaVector, label: SparseEsaVector, store,
                         cutoff: float = DEFAULT_CUTOFF, weighted: bool = False) -> float:
    """Mean similarity of Hungarian-matched entity pairs.

    With ``weighted=True`` the matching maximizes weight-scaled similarities
    and the value is normalized by the two weight norms, which reduces to the
    plain sparse cosine when no two distinct entities are similar.
    """
    if len(doc) == 0 or len(label) == 0:
        raise ValueError("densified similarity needs two nonempty vectors")
    S = similarity_matrix(doc.entities, label.entities, store, cutoff)
    if weighted:
        wd, wl = doc.weights, label.weights
        norm = np.linalg.norm(wd) * np.linalg.norm(wl)
        if norm == 0:
            raise ValueError("cosine is undefined for an all-zero vector")
        S = S * wd[:, None] * wl[None, :]
        denom = norm
    else:
        denom = min(S.shape)
    # all-zero rows and columns cannot raise the optimum; drop them
    rows = np.flatnonzero(S.any(axis=1))
    cols = np.flatnonzero(S.any(axis=0))
    if rows.size == 0:
        return 0.0
    sub = S[np.ix_(rows, cols)]
    pairs = hungarian_match(sub)
    return min(assignment_value(sub, pairs) / denom, 1.0)


@dataclass(frozen=True)
class LabelNode:
    parent: str | None
    vector: SparseEsaVector
    depth: int


class LabelTree:
    """Single-rooted label hierarchy; each label carries a description vector."""

    def __init__(self, records: Iterable[tuple[str, str | None, SparseEsaVector]]):
        parents: dict[str, str | None] = {}
        vectors: dict[str, SparseEsaVector] = {}
        for label, parent, vec in records:
            if label in parents:
                raise StructureError(f"label {label!r} defined twice")
            parents[label] = parent
            vectors[label] = vec
        roots = sorted(l for l, p in parents.items() if p is None)
        if len(roots) != 1:
            raise StructureError(f"label tree needs exactly one root, found {len(roots)}: {roots[:5]}")
        for label, p in parents.items():
            if p is not None and p not in parents:
                raise StructureError(f"label {label!r} has undefined parent {p!r}")
        self.root = roots[0]
        depth: dict[str, int] = {self.root: 0}
        for label in parents:
            chain = []
            cur = label
            while cur not in depth:
                chain.append(cur)
                cur = parents[cur]
                if cur in chain:
                    raise StructureError(f"cycle through label {cur!r}")
            for back in reversed(chain):
                depth[back] = depth[parents[back]] + 1
        self.nodes = {l: LabelNode(parents[l], vectors[l], depth[l]) for l in parents}
        kids: dict[str, list[str]] = {l: [] for l in parents}
        for l, p in parents.items():
            if p is not None:
                kids[p].append(l)
        self.children = {l: sorted(k) for l, k in kids.items()}
        self.leaves = sorted(l for l, k in kids.items() if not k and l != self.root)

    @property
    def labels(self) -> list[str]:
        """Every label except the root (the label universe for scoring)."""
        return sorted(l for l in self.nodes if l != self.root)

    def path(self, label: str) -> list[str]:
        """``label`` and its ancestors, leaf first, root excluded."""
        out = []
        cur = label
        while cur is not None and cur != self.root:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out


def leaf_similarities(doc: SparseEsaVector, tree: LabelTree, store, cutoff: float = DEFAULT_CUTOFF,
                      weighted: bool = False) -> dict[str, float]:
    vecs = EntityVectors.of(store)
    out = {}
    for leaf in tree.leaves:
        vec = tree.nodes[leaf].vector
        out[leaf] = densified_similarity(doc, vec, vecs, cutoff, weighted) if len(vec) else 0.0
    return out


def _paths_from_sims(sims: Mapping[str, float], tree: LabelTree, delta: float) -> tuple[list[str], list[str]]:
    if not sims:
        return [], []
    ranked = sorted(sims, key=lambda l: (-sims[l], l))
    top = sims[ranked[0]]
    if top <= 0:
        return [], []
    labels: list[str] = []
    seen = set()
    for leaf in ranked:
        if sims[leaf] < delta * top:
            break
        for l in tree.path(leaf):
            if l not in seen:
                seen.add(l)
                labels.append(l)
    return labels, tree.path(ranked[0])


def bottom_up_classify(doc: SparseEsaVector, tree: LabelTree, store, delta: float = DEFAULT_DELTA,
                       cutoff: float = DEFAULT_CUTOFF, weighted: bool = False,
                       top1: bool = False) -> list[str]:
    """Labels predicted for ``doc``: best leaf path first, then every leaf whose
    similarity reaches ``delta`` times the best, with its ancestors.

    Empty when no leaf has positive similarity.  ``top1`` keeps only the best
    leaf path.
    """
    if len(doc) == 0:
        raise ValueError("cannot classify an empty document vector")
    sims = leaf_similarities(doc, tree, store, cutoff, weighted)
    labels, best = _paths_from_sims(sims, tree, delta)
    return best if top1 else labels


@dataclass
class ConfusionCounts:
    tp: dict[str, int]
    fp: dict[str, int]
    fn: dict[str, int]

    @classmethod
    def tally(cls, predictions: Mapping[str, Iterable[str]], gold: Mapping[str, Iterable[str]],
              label_universe: Iterable[str]) -> "ConfusionCounts":
        universe = list(dict.fromkeys(label_universe))
        if not universe:
            raise ConfigError("empty label universe")
        known = set(universe)
        tp = dict.fromkeys(universe, 0)
        fp = dict.fromkeys(universe, 0)
        fn = dict.fromkeys(universe, 0)
        for doc in set(gold) | set(predictions):
            pred = set(predictions.get(doc, ()))
            true = set(gold.get(doc, ()))
            unknown = (pred | true) - known
            if unknown:
                raise ConfigError(f"labels outside the label universe: {sorted(unknown)[:5]}")
            for l in pred & true:
                tp[l] += 1
            for l in pred - true:
                fp[l] += 1
            for l in true - pred:
                fn[l] += 1
        return cls(tp, fp, fn)

    def f1(self) -> tuple[float, float]:
        labels = list(self.tp)
        TP = sum(self.tp.values())
        FP = sum(self.fp.values())
        FN = sum(self.fn.values())
        p_bar = TP / (TP + FP) if TP + FP else 0.0
        r_bar = TP / (TP + FN) if TP + FN else 0.0
        micro = 2 * p_bar * r_bar / (p_bar + r_bar) if p_bar + r_bar else 0.0
        per = []
        for l in labels:
            tp, fp, fn = self.tp[l], self.fp[l], self.fn[l]
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            per.append(2 * p * r / (p + r) if p + r else 0.0)
        return micro, sum(per) / len(per)


def micro_macro_f1(predictions, gold, label_universe) -> tuple[float, float]:
    return ConfusionCounts.tally(predictions, gold, label_universe).f1()


@dataclass
class DatalessReport:
    micro_f1: float
    macro_f1: float
    micro_f1_at_1: float
    counts: ConfusionCounts
    predictions: dict[str, list[str]] = field(repr=False, default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"micro_f1={self.micro_f1:.6f}", f"macro_f1={self.macro_f1:.6f}",
               f"micro_f1_at_1={self.micro_f1_at_1:.6f}", "# label\ttp\tfp\tfn"]
        for l in self.counts.tp:
            out.append(f"{l}\t{self.counts.tp[l]}\t{self.counts.fp[l]}\t{self.counts.fn[l]}")
        return out


def evaluate_dataless(docs: Mapping[str, SparseEsaVector], tree: LabelTree,
                      gold: Mapping[str, Iterable[str]], store, delta: float = DEFAULT_DELTA,
                      cutoff: float = DEFAULT_CUTOFF, weighted: bool = False) -> DatalessReport:
    vecs = EntityVectors.of(store)
    full: dict[str, list[str]] = {}
    at1: dict[str, list[str]] = {}
    for doc_id in sorted(docs):
        sims = leaf_similarities(docs[doc_id], tree, vecs, cutoff, weighted)
        full[doc_id], at1[doc_id] = _paths_from_sims(sims, tree, delta)
    gold = {d: set(ls) for d, ls in gold.items()}
    counts = ConfusionCounts.tally(full, gold, tree.labels)
    micro, macro = counts.f1()
    micro1, _ = micro_macro_f1(at1, gold, tree.labels)
    return DatalessReport(micro, macro, micro1, counts, full)


# --- files -----------------------------------------------------------------

def read_sparse_vectors(path: str | os.PathLike, max_entries: int | None = DEFAULT_MAX_ENTRIES
                        ) -> dict[str, SparseEsaVector]:
    out = {}
    for lineno, text in iter_lines(path):
        doc_id, rest = split_fields(text, 2, path, lineno)
        try:
            out[doc_id] = SparseEsaVector.parse(rest, max_entries)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return out


def read_label_tree(path: str | os.PathLike, max_entries: int | None = DEFAULT_MAX_ENTRIES) -> LabelTree:
    records = []
    for lineno, text in iter_lines(path):
        fields_ = split_fields(text, 3, path, lineno, min_fields=2)
        label, parent = fields_[0], fields_[1]
        try:
            vec = SparseEsaVector.parse(fields_[2] if len(fields_) == 3 else "", max_entries)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        records.append((label, None if parent == "-" else parent, vec))
    return LabelTree(records)


def read_gold_labels(path: str | os.PathLike) -> dict[str, set[str]]:
    out = {}
    for lineno, text in iter_lines(path):
        doc_id, rest = split_fields(text, 2, path, lineno)
        out[doc_id] = set(rest.split())
    return out


def write_sparse_vectors(path, vectors: Mapping[str, SparseEsaVector]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, vec in vectors.items():
            fh.write(f"{doc_id}\t{vec.format()}\n")


def write_label_tree(path, tree: LabelTree) -> None:
    order = sorted(tree.nodes, key=lambda l: (tree.nodes[l].depth, l))
    with open(path, "w", encoding="utf-8") as fh:
        for l in order:
            node = tree.nodes[l]
            fh.write(f"{l}\t{node.parent or '-'}\t{node.vector.format()}\n")
