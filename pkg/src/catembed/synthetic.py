"""Seeded synthetic datasets with planted structure, for tests and scripts."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .dataless import LabelTree, SparseEsaVector, write_label_tree, write_sparse_vectors
from .eval_concept import GoldStandard, split_even
from .trainer import EmbeddingStore, export_embeddings


@dataclass
class PlantedData:
    articles: list[tuple[str, list[str]]]
    edges: list[tuple[str, str]]
    labels: list[tuple[str, str]]
    gold: GoldStandard
    heldout: GoldStandard
    extra: dict = field(default_factory=dict)

    @property
    def pair_count(self) -> int:
        return sum(len(c) for _, c in self.articles)


def _cooccurrence_articles(rng, entities, prob, repeats):
    """Each entity gets ``repeats`` articles; candidate j appears in an article
    of entity i independently with probability ``prob[i, j]``."""
    n = len(entities)
    articles = []
    for _ in range(repeats):
        hits = rng.random((n, n)) < prob
        for i in range(n):
            ctx = [entities[j] for j in np.flatnonzero(hits[i])]
            if ctx:
                articles.append((entities[i], ctx))
    return articles


def planted_corpus(n_categories: int = 5, per_category: int = 20, p_within: float = 0.9,
                   p_cross: float = 0.02, repeats: int = 27, holdout: float = 0.5,
                   seed: int = 42) -> PlantedData:
    """Flat categories with dense within-category co-occurrence.

    The label links of a per-category ``holdout`` fraction of entities are
    withheld from ``labels`` so they can be categorized afterwards.  The
    defaults give roughly 50k pairs.
    """
    rng = np.random.default_rng(seed)
    cats = [f"cat{c}" for c in range(n_categories)]
    entities = [f"ent{c}_{i:02d}" for c in range(n_categories) for i in range(per_category)]
    of = np.repeat(np.arange(n_categories), per_category)
    prob = np.where(of[:, None] == of[None, :], p_within, p_cross)
    np.fill_diagonal(prob, 0.0)
    articles = _cooccurrence_articles(rng, entities, prob, repeats)
    gold = GoldStandard({e: cats[c] for e, c in zip(entities, of)})
    keep, held = split_even(gold, seed, 1.0 - holdout)
    labels = sorted((e, g) for e, g in keep.assignments.items())
    return PlantedData(articles, [], labels, gold, held)


def planted_taxonomy(n_parents: int = 3, children_per_parent: int = 3, per_leaf: int = 10,
                     p_sibling: float = 0.5, p_cross: float = 0.02, repeats: int = 40,
                     holdout: float = 0.5, seed: int = 0) -> PlantedData:
    """Three-level taxonomy ``root -> parent -> leaf -> entities``.

    Co-occurrence depends only on the parent, so sibling leaves share their
    context statistics.  ``gold`` maps entities to their parent category,
    which carries no direct entity labels.
    """
    rng = np.random.default_rng(seed)
    parents = [f"p{a}" for a in range(n_parents)]
    leaves = [f"p{a}_l{b}" for a in range(n_parents) for b in range(children_per_parent)]
    edges = [(p, "root") for p in parents]
    edges += [(l, l.split("_")[0]) for l in leaves]
    entities, leaf_of, parent_of = [], [], []
    for li, leaf in enumerate(leaves):
        for i in range(per_leaf):
            entities.append(f"{leaf}_e{i}")
            leaf_of.append(leaf)
            parent_of.append(li // children_per_parent)
    parent_of = np.array(parent_of)
    prob = np.where(parent_of[:, None] == parent_of[None, :], p_sibling, p_cross)
    np.fill_diagonal(prob, 0.0)
    articles = _cooccurrence_articles(rng, entities, prob, repeats)

    by_leaf = GoldStandard(dict(zip(entities, leaf_of)))
    keep, held_leaf = split_even(by_leaf, seed, 1.0 - holdout)
    labels = sorted(keep.assignments.items())
    gold = GoldStandard({e: parents[p] for e, p in zip(entities, parent_of)})
    heldout = gold.restrict(held_leaf.assignments)
    return PlantedData(articles, edges, labels, gold, heldout,
                       extra={"leaf_gold": by_leaf, "parents": parents, "leaves": leaves})


@dataclass
class DatalessToy:
    tree: LabelTree
    docs: dict[str, SparseEsaVector]
    gold: dict[str, set[str]]
    store: EmbeddingStore


def dataless_toy(n_parents: int = 2, leaves_per_parent: int = 3, leaf_size: int = 20,
                 docs_per_leaf: int = 5, own_overlap: float = 0.8, other_overlap: float = 0.1,
                 dim: int = 50, seed: int = 0) -> DatalessToy:
    """Two-level label tree with disjoint leaf entity sets.

    Each document takes ``own_overlap`` of its entities from its leaf's
    description, ``other_overlap`` from one other leaf and the rest from
    unrelated noise entities.  Entity vectors are random, so distinct
    entities are almost never above the similarity cutoff.
    """
    rng = np.random.default_rng(seed)
    records = [("root", None, SparseEsaVector({}))]
    leaf_entities: dict[str, list[str]] = {}
    for a in range(n_parents):
        parent = f"g{a}"
        records.append((parent, "root", SparseEsaVector({})))
        for b in range(leaves_per_parent):
            leaf = f"g{a}_t{b}"
            ents = [f"{leaf}_x{i}" for i in range(leaf_size)]
            leaf_entities[leaf] = ents
            w = rng.uniform(1.0, 50.0, size=leaf_size)
            records.append((leaf, parent, SparseEsaVector(zip(ents, w))))
    tree = LabelTree(records)

    n_own = int(round(own_overlap * leaf_size))
    n_other = int(np.floor(other_overlap * leaf_size))
    n_noise = leaf_size - n_own - n_other
    docs, gold = {}, {}
    noise_counter = 0
    leaves = tree.leaves
    for leaf in leaves:
        others = [l for l in leaves if l != leaf]
        for d in range(docs_per_leaf):
            doc_id = f"doc_{leaf}_{d}"
            own = list(rng.choice(leaf_entities[leaf], n_own, replace=False))
            other_leaf = others[int(rng.integers(len(others)))]
            other = list(rng.choice(leaf_entities[other_leaf], n_other, replace=False))
            noise = [f"noise{noise_counter + i}" for i in range(n_noise)]
            noise_counter += n_noise
            ents = own + other + noise
            docs[doc_id] = SparseEsaVector(zip(ents, rng.uniform(1.0, 50.0, size=len(ents))))
            gold[doc_id] = set(tree.path(leaf))

    all_ents = sorted({e for v in leaf_entities.values() for e in v} |
                      {e for v in docs.values() for e in v.entities})
    vecs = rng.standard_normal((len(all_ents), dim))
    store = EmbeddingStore(all_ents, [], vecs, np.zeros_like(vecs), np.zeros((0, dim)))
    return DatalessToy(tree, docs, gold, store)


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in lines)


def write_planted(data: PlantedData, directory: str | os.PathLike, prefix: str = "") -> dict[str, str]:
    """Write ``corpus``, ``edges``, ``labels`` and ``gold`` files in the CLI formats.

    ``gold`` holds every entity's class, ``heldout`` only the withheld ones.
    Returns the written paths by role.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {role: os.path.join(directory, f"{prefix}{role}.tsv")
             for role in ("corpus", "edges", "labels", "gold", "heldout")}
    _write_lines(paths["corpus"], (f"{t}\t{' '.join(ctx)}" for t, ctx in data.articles))
    _write_lines(paths["edges"], (f"{c}\t{p}" for c, p in data.edges))
    _write_lines(paths["labels"], (f"{e}\t{c}" for e, c in data.labels))
    _write_lines(paths["gold"], (f"{g}\t{e}" for e, g in sorted(data.gold.assignments.items())))
    _write_lines(paths["heldout"], (f"{g}\t{e}" for e, g in sorted(data.heldout.assignments.items())))
    return paths


def write_dataless(toy: DatalessToy, directory: str | os.PathLike, prefix: str = "") -> dict[str, str]:
    """Write ``docs``, ``labels``, ``gold`` and ``embeddings`` files in the CLI formats."""
    os.makedirs(directory, exist_ok=True)
    paths = {role: os.path.join(directory, f"{prefix}{role}.tsv")
             for role in ("docs", "labels", "gold")}
    paths["embeddings"] = os.path.join(directory, f"{prefix}embeddings.vec")
    write_sparse_vectors(paths["docs"], toy.docs)
    write_label_tree(paths["labels"], toy.tree)
    _write_lines(paths["gold"], (f"{d}\t{' '.join(sorted(ls))}" for d, ls in sorted(toy.gold.items())))
    export_embeddings(toy.store, paths["embeddings"], "entities")
    return paths
