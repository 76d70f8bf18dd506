"""Joint entity and category embeddings over a category hierarchy.

Train with :func:`catembed.trainer.train` (CE or HCE model) and evaluate with
:mod:`catembed.eval_concept` and :mod:`catembed.dataless`.
"""

from .corpus import NegativeSampler, TrainingCorpus, TrainingPair, draw_negatives, load_corpus
from .hierarchy import AncestorWeights, CategoryDag, break_cycles, load_hierarchy
from .trainer import (
    EmbeddingStore,
    TrainConfig,
    export_embeddings,
    import_embeddings,
    init_model,
    pair_step,
    softmax_prob,
    train,
)

__all__ = [
    "AncestorWeights",
    "CategoryDag",
    "EmbeddingStore",
    "NegativeSampler",
    "TrainConfig",
    "TrainingCorpus",
    "TrainingPair",
    "break_cycles",
    "draw_negatives",
    "export_embeddings",
    "import_embeddings",
    "init_model",
    "load_corpus",
    "load_hierarchy",
    "pair_step",
    "softmax_prob",
    "train",
]
