"""End-to-end runs on the synthetic datasets, shared by scripts and tests."""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import load_corpus
from .dataless import evaluate_dataless
from .eval_concept import CLUSTER_GRID, assignment_clustering, cluster, nn_classify, purity
from .hierarchy import load_hierarchy
from .synthetic import dataless_toy, planted_corpus, planted_taxonomy
from .trainer import TrainConfig, TrainResult, train


@dataclass
class RecoveryResult:
    result: TrainResult
    pair_count: int
    nn_purity: float
    cluster_purity: dict[tuple, float] = field(default_factory=dict)

    @property
    def epoch_losses(self) -> list[float]:
        return self.result.epoch_losses


def _vectors(store, gold):
    concepts = {e: store.entity_vector(e) for e in gold.assignments}
    cats = {c: store.category_vector(c) for c in gold.class_set}
    return concepts, cats


def planted_recovery(seed: int = 42, dim: int = 50, epochs: int = 5, model: str = "hce",
                     **corpus_kw) -> RecoveryResult:
    """Train on the flat planted corpus and categorize the held-out entities.

    NN purity groups held-out entities by their nearest category vector;
    clustering purity runs every cell of the clustering grid with ``k`` equal
    to the number of categories.
    """
    data = planted_corpus(seed=seed, **corpus_kw)
    corpus = load_corpus(data.articles)
    dag = load_hierarchy(data.edges, data.labels)
    res = train(corpus, dag, TrainConfig(model=model, dim=dim, epochs=epochs, seed=seed))
    concepts, cats = _vectors(res.store, data.heldout)
    nn = purity(assignment_clustering(nn_classify(concepts, cats)), data.heldout)
    k = len(data.heldout.class_set)
    clusters = {cell: purity(cluster(concepts, k, *cell, seed=seed), data.heldout)
                for cell in CLUSTER_GRID}
    return RecoveryResult(res, corpus.pair_count, nn, clusters)


def hierarchy_trend(seed: int, dim: int = 30, epochs: int = 5, **taxonomy_kw) -> dict[str, float]:
    """Held-out NN purity against parent categories for CE and HCE.

    Parents carry no direct entity labels, so their vectors are informed only
    through ancestor terms.
    """
    data = planted_taxonomy(seed=seed, **taxonomy_kw)
    corpus = load_corpus(data.articles)
    dag = load_hierarchy(data.edges, data.labels)
    out = {}
    for model in ("ce", "hce"):
        res = train(corpus, dag, TrainConfig(model=model, dim=dim, epochs=epochs, seed=seed))
        concepts, cats = _vectors(res.store, data.heldout)
        out[model] = purity(assignment_clustering(nn_classify(concepts, cats)), data.heldout)
    return out


def dataless_pipeline(seed: int = 0, **toy_kw):
    toy = dataless_toy(seed=seed, **toy_kw)
    return evaluate_dataless(toy.docs, toy.tree, toy.gold, toy.store)
