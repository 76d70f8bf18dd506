"""Concept categorization: clustering + purity, and nearest-category classification."""

from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, ParseError
from .textio import iter_lines, split_fields

log = logging.getLogger(__name__)

CLUSTER_GRID = (
    ("kmeans", "euclidean", None),
    ("agglomerative", "euclidean", "complete"),
    ("agglomerative", "euclidean", "average"),
    ("agglomerative", "cosine", "complete"),
    ("agglomerative", "cosine", "average"),
)


@dataclass(frozen=True)
class GoldStandard:
    assignments: dict[str, str]
    tags: dict[str, str] = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.assignments)

    @property
    def class_set(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {}
        for concept, cls in self.assignments.items():
            out.setdefault(cls, set()).add(concept)
        return {c: frozenset(m) for c, m in sorted(out.items())}

    def restrict(self, concepts: Iterable[str]) -> "GoldStandard":
        keep = set(concepts)
        return GoldStandard({c: g for c, g in self.assignments.items() if c in keep},
                            {c: t for c, t in self.tags.items() if c in keep})

    def subset(self, tag: str) -> "GoldStandard":
        return self.restrict(c for c, t in self.tags.items() if t == tag)


@dataclass(frozen=True)
class ClusteringResult:
    clusters: tuple[frozenset[str], ...]
    method: dict = field(default_factory=dict, compare=False)

    @property
    def concepts(self) -> set[str]:
        return set().union(*self.clusters) if self.clusters else set()


def read_dataset(path: str | os.PathLike) -> GoldStandard:
    """Read ``category<TAB>entity[<TAB>tag]`` lines.  Repeated rows are merged."""
    assignments: dict[str, str] = {}
    tags: dict[str, str] = {}
    dupes = 0
    for lineno, text in iter_lines(path):
        fields_ = split_fields(text, 3, path, lineno, min_fields=2)
        cls, concept = fields_[0], fields_[1]
        prev = assignments.get(concept)
        if prev is not None and prev != cls:
            raise ParseError(f"concept {concept!r} already assigned to {prev!r}", path, lineno)
        if prev is not None:
            dupes += 1
        assignments[concept] = cls
        if len(fields_) == 3 and fields_[2]:
            tags.setdefault(concept, fields_[2])
    if dupes:
        log.warning("%s: merged %d repeated rows", path, dupes)
    return GoldStandard(assignments, tags)


def split_even(gold: GoldStandard, seed: int, fraction: float = 0.5) -> tuple[GoldStandard, GoldStandard]:
    """Per-class random split into (validation, test)."""
    rng = np.random.default_rng(seed)
    val: list[str] = []
    for _, members in gold.class_set.items():
        ordered = sorted(members)
        perm = rng.permutation(len(ordered))
        nval = int(len(ordered) * fraction)
        val.extend(ordered[i] for i in perm[:nval])
    test = set(gold.assignments) - set(val)
    return gold.restrict(val), gold.restrict(test)


def _matrix(vectors: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    ids = sorted(vectors)
    if not ids:
        raise ConfigError("no vectors to cluster")
    dims = {np.shape(vectors[i]) for i in ids}
    if len(dims) != 1:
        raise ConfigError(f"vectors have mixed shapes: {sorted(dims)}")
    return ids, np.array([np.asarray(vectors[i], dtype=np.float64) for i in ids])


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of concepts ({n})")


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(vectors: Mapping[str, np.ndarray], k: int, seed: int = 0, max_iters: int = 300) -> ClusteringResult:
    """Lloyd iterations from k-means++ seeds."""
    ids, X = _matrix(vectors)
    n = len(ids)
    _check_k(k, n)
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    centers = X[chosen].copy()

    labels = np.full(n, -1)
    iters = 0
    for iters in range(1, max_iters + 1):
        dist = _sq_dists(X, centers)
        new = dist.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        current = dist[np.arange(n), new]
        while (counts == 0).any():
            # reseed an empty cluster with the point farthest from its center,
            # taking only points whose cluster keeps at least one member
            empty = int(np.flatnonzero(counts == 0)[0])
            movable = counts[new] > 1
            far = int(np.where(movable, current, -1.0).argmax())
            counts[new[far]] -= 1
            new[far] = empty
            counts[empty] += 1
            current[far] = -1.0
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
    inertia = float(_sq_dists(X, centers)[np.arange(n), labels].sum())
    clusters = tuple(frozenset(ids[i] for i in np.flatnonzero(labels == j)) for j in range(k))
    return ClusteringResult(clusters, {"algorithm": "kmeans", "metric": "euclidean", "seed": seed,
                                       "iterations": iters, "inertia": inertia})


def _pairwise(X: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        sq = (X ** 2).sum(axis=1)
        D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    elif metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        U = np.divide(X, norms[:, None], out=np.zeros_like(X), where=norms[:, None] > 0)
        D = 1.0 - np.clip(U @ U.T, -1.0, 1.0)
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    np.fill_diagonal(D, 0.0)
    return D


def agglomerative(vectors: Mapping[str, np.ndarray], k: int, metric: str = "euclidean",
                  linkage: str = "average") -> ClusteringResult:
    """Bottom-up merging until ``k`` clusters remain.

    Each cluster is named by its lexicographically smallest member; among
    equally close pairs the pair with the smallest names merges first.
    """
    if linkage not in ("complete", "average"):
        raise ConfigError(f"unsupported linkage {linkage!r}")
    ids, X = _matrix(vectors)
    n = len(ids)
    _check_k(k, n)
    D = _pairwise(X, metric)
    np.fill_diagonal(D, np.inf)
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    sizes = np.ones(n)
    members = {i: [i] for i in range(n)}
    merges = []
    while len(members) > k:
        # row-major argmin over i < j picks the lexicographically smallest tie
        i, j = divmod(int(np.argmin(np.where(upper, D, np.inf))), n)
        merges.append((ids[i], ids[j], float(D[i, j])))
        if linkage == "complete":
            new = np.maximum(D[i], D[j])
        else:
            new = (sizes[i] * D[i] + sizes[j] * D[j]) / (sizes[i] + sizes[j])
        new[i] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
    clusters = tuple(frozenset(ids[m] for m in members[r]) for r in sorted(members))
    return ClusteringResult(clusters, {"algorithm": "agglomerative", "metric": metric,
                                       "linkage": linkage, "merges": merges})


def purity(clustering: ClusteringResult, gold: GoldStandard) -> float:
    if not clustering.clusters or gold.n == 0:
        raise ConfigError("purity is undefined for an empty clustering")
    unknown = clustering.concepts - gold.assignments.keys()
    if unknown:
        raise ConfigError(f"clustered concepts missing from the gold standard: {sorted(unknown)[:5]}")
    total = 0
    for cluster in clustering.clusters:
        if cluster:
            counts: dict[str, int] = {}
            for c in cluster:
                g = gold.assignments[c]
                counts[g] = counts.get(g, 0) + 1
            total += max(counts.values())
    return total / gold.n


def nn_classify(concept_vectors: Mapping[str, np.ndarray], category_vectors: Mapping[str, np.ndarray],
                metric: str = "euclidean") -> dict[str, str]:
    """Assign each concept to its nearest category vector (ties: smallest id)."""
    if not category_vectors:
        raise ConfigError("no candidate categories")
    cat_ids = sorted(category_vectors)
    shapes = Counter(np.shape(category_vectors[c]) for c in cat_ids)
    shape = shapes.most_common(1)[0][0]
    odd = [c for c in cat_ids if np.shape(category_vectors[c]) != shape]
    if odd or len(shape) != 1:
        raise ConfigError(f"category vectors have mixed dimensions: {odd[:10] or cat_ids[:10]}")
    C = np.array([np.asarray(category_vectors[c], dtype=np.float64) for c in cat_ids])
    d = C.shape[1]
    bad = sorted(c for c, v in concept_vectors.items() if np.shape(v) != (d,))
    if bad:
        raise ConfigError(f"dimension mismatch (expected {d}) for concepts: {bad[:10]}")
    con_ids = sorted(concept_vectors)
    if not con_ids:
        return {}
    X = np.array([np.asarray(concept_vectors[c], dtype=np.float64) for c in con_ids])
    if metric == "euclidean":
        dist = _sq_dists(X, C)
    elif metric == "cosine":
        xn = np.linalg.norm(X, axis=1, keepdims=True)
        cn = np.linalg.norm(C, axis=1, keepdims=True)
        Xu = np.divide(X, xn, out=np.zeros_like(X), where=xn > 0)
        Cu = np.divide(C, cn, out=np.zeros_like(C), where=cn > 0)
        dist = -(Xu @ Cu.T)
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    best = dist.argmin(axis=1)
    return {c: cat_ids[b] for c, b in zip(con_ids, best)}


def assignment_clustering(assignment: Mapping[str, str], method: dict | None = None) -> ClusteringResult:
    """Group concepts by their assigned category."""
    groups: dict[str, set[str]] = {}
    for concept, cat in assignment.items():
        groups.setdefault(cat, set()).add(concept)
    return ClusteringResult(tuple(frozenset(g) for _, g in sorted(groups.items())),
                            method or {"algorithm": "nn"})


def cluster(vectors: Mapping[str, np.ndarray], k: int, algorithm: str, metric: str = "euclidean",
            linkage: str | None = None, seed: int = 0) -> ClusteringResult:
    if algorithm == "kmeans":
        if metric != "euclidean":
            raise ConfigError("kmeans supports the euclidean metric only")
        return kmeans(vectors, k, seed)
    if algorithm == "agglomerative":
        return agglomerative(vectors, k, metric, linkage or "average")
    raise ConfigError(f"unknown clustering algorithm {algorithm!r}")


@dataclass
class GridCell:
    embedding: str
    algorithm: str
    metric: str
    linkage: str | None
    validation_purity: float
    test_purity: float | None = None


@dataclass
class ConceptReport:
    protocol: str
    cells: list[GridCell]
    best: GridCell
    missing: list[str]

    def lines(self) -> list[str]:
        b = self.best
        out = [
            f"protocol={self.protocol}",
            f"best_embedding={b.embedding}",
            f"best_algorithm={b.algorithm}",
            f"best_metric={b.metric}",
            f"best_linkage={b.linkage or '-'}",
            f"validation_purity={b.validation_purity:.6f}",
            f"test_purity={b.test_purity:.6f}",
            f"missing_concepts={len(self.missing)}",
            "# embedding\talgorithm\tmetric\tlinkage\tvalidation_purity",
        ]
        for c in self.cells:
            out.append(f"{c.embedding}\t{c.algorithm}\t{c.metric}\t{c.linkage or '-'}\t"
                       f"{c.validation_purity:.6f}")
        return out


def _score(protocol, vecs, cats, gold, cell_opts, seed):
    if protocol == "nn":
        assign = nn_classify(vecs, cats, cell_opts[1])
        return purity(assignment_clustering(assign), gold)
    algorithm, metric, linkage = cell_opts
    k = len(gold.class_set)
    return purity(cluster(vecs, k, algorithm, metric, linkage, seed), gold)


def evaluate_concepts(embeddings: Mapping[str, tuple[Mapping[str, np.ndarray], Mapping[str, np.ndarray]]],
                      gold: GoldStandard, protocol: str = "nn", split_seed: int = 0,
                      metrics: Sequence[str] = ("euclidean",), cluster_seed: int = 0) -> ConceptReport:
    """Select the best grid cell on a validation half, report its test purity.

    ``embeddings`` maps a name (e.g. one file per dimension) to a pair of
    ``(concept vectors, category vectors)``.  For clustering, ``k`` is the
    number of gold classes.
    """
    if protocol not in ("nn", "cluster"):
        raise ConfigError(f"protocol must be nn or cluster, got {protocol!r}")
    names = list(embeddings)
    covered = set.intersection(*(set(embeddings[n][0]) for n in names)) if names else set()
    missing = sorted(set(gold.assignments) - covered)
    if missing:
        log.warning("%d concepts missing from the embeddings; skipped", len(missing))
    gold = gold.restrict(covered)
    if gold.n == 0:
        raise CoverageError("no gold concepts are covered by the embeddings")
    val, test = split_even(gold, split_seed)

    if protocol == "nn":
        options = [("nn", m, None) for m in metrics]
    else:
        options = list(CLUSTER_GRID)
    cells = []
    for name in names:
        vecs, cats = embeddings[name]
        if protocol == "nn":
            absent = sorted(set(gold.class_set) - set(cats))
            if absent:
                raise CoverageError(f"{name}: no category vectors for {absent}")
            cats = {c: cats[c] for c in gold.class_set}
        for opts in options:
            v = {c: vecs[c] for c in val.assignments}
            s = _score(protocol, v, cats, val, opts, cluster_seed)
            cells.append(GridCell(name, *opts, validation_purity=s))
    best = max(cells, key=lambda c: c.validation_purity)
    vecs, cats = embeddings[best.embedding]
    if protocol == "nn":
        cats = {c: cats[c] for c in gold.class_set}
    best.test_purity = _score(protocol, {c: vecs[c] for c in test.assignments}, cats, test,
                              (best.algorithm, best.metric, best.linkage), cluster_seed)
    return ConceptReport(protocol, cells, best, missing)
