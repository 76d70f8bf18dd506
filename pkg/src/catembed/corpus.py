"""Target/context entity pair corpus and the negative sampler.

A corpus record is one article: the described entity followed by the
entities it mentions.  Every mention becomes one ``(target, context)`` pair.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ParseError
from .textio import iter_lines

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingPair:
    target: str
    context: str


class TrainingCorpus:
    """Immutable pair corpus.

    Pairs are stored as two parallel index arrays into ``entity_ids``.
    ``counts`` holds raw context-occurrence tallies; ``frequencies`` floors
    them at one so that entities seen only as targets can still be drawn as
    negatives.
    """

    def __init__(self, entity_ids: Sequence[str], targets, contexts, counts):
        self.entity_ids = list(entity_ids)
        self.vocab = {e: i for i, e in enumerate(self.entity_ids)}
        self.targets = np.asarray(targets, dtype=np.int64)
        self.contexts = np.asarray(contexts, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.frequencies = np.maximum(self.counts, 1)
        for arr in (self.targets, self.contexts, self.counts):
            arr.setflags(write=False)

    def __len__(self):
        return self.pair_count

    def __repr__(self):
        return f"TrainingCorpus({len(self.entity_ids)} entities, {self.pair_count} pairs)"

    @property
    def pair_count(self) -> int:
        return int(self.targets.shape[0])

    @property
    def target_ids(self) -> list[str]:
        """Entities that occur in the target role, in vocabulary order."""
        seen = np.zeros(len(self.entity_ids), dtype=bool)
        seen[self.targets] = True
        return [e for e, s in zip(self.entity_ids, seen) if s]

    def epoch_order(self, rng: np.random.Generator, buffer_size: int | None = None) -> np.ndarray:
        """Pair indices for one epoch in shuffled order.

        With ``buffer_size`` the corpus is cut into consecutive blocks whose
        order and contents are shuffled independently, bounding the reach of
        the shuffle.
        """
        n = self.pair_count
        if buffer_size is None or buffer_size >= n:
            return rng.permutation(n)
        if buffer_size < 1:
            raise ConfigError("shuffle buffer must be >= 1")
        starts = np.arange(0, n, buffer_size)
        out = []
        for s in rng.permutation(starts):
            block = np.arange(s, min(s + buffer_size, n))
            out.append(rng.permutation(block))
        return np.concatenate(out)

    def iter_pairs(self, seed: int | None = None, buffer_size: int | None = None) -> Iterator[TrainingPair]:
        """Replay the pairs, in file order or shuffled by ``seed``."""
        if seed is None:
            order = range(self.pair_count)
        else:
            order = self.epoch_order(np.random.default_rng(seed), buffer_size)
        ids = self.entity_ids
        for i in order:
            yield TrainingPair(ids[self.targets[i]], ids[self.contexts[i]])

    def write_vocab(self, path: str | os.PathLike) -> None:
        """Write ``entity<TAB>count`` lines, most frequent first."""
        order = sorted(range(len(self.entity_ids)), key=lambda i: (-self.counts[i], self.entity_ids[i]))
        with open(path, "w", encoding="utf-8") as fh:
            for i in order:
                fh.write(f"{self.entity_ids[i]}\t{self.counts[i]}\n")


def load_corpus(article_records: Iterable[tuple[str, Sequence[str]]]) -> TrainingCorpus:
    vocab: dict[str, int] = {}
    targets: list[int] = []
    contexts: list[int] = []
    skipped = 0

    def index(e):
        i = vocab.get(e)
        if i is None:
            i = vocab[e] = len(vocab)
        return i

    for target, ctx in article_records:
        if not ctx:
            skipped += 1
            continue
        t = index(target)
        for c in ctx:
            targets.append(t)
            contexts.append(index(c))
    if skipped:
        log.warning("skipped %d articles with no context entities", skipped)
    counts = np.bincount(np.asarray(contexts, dtype=np.int64), minlength=len(vocab))
    return TrainingCorpus(list(vocab), targets, contexts, counts)


def read_corpus_records(path: str | os.PathLike) -> Iterator[tuple[str, list[str]]]:
    for lineno, text in iter_lines(path):
        target, sep, rest = text.partition("\t")
        target = target.strip()
        if not target or " " in target:
            raise ParseError("expected target entity followed by a tab", path, lineno)
        yield target, rest.split()


def read_corpus(path: str | os.PathLike) -> TrainingCorpus:
    return load_corpus(read_corpus_records(path))


class NegativeSampler:
    """Draws noise entities with probability proportional to ``freq ** exponent``."""

    def __init__(self, entity_ids: Sequence[str], frequencies, exponent: float = 0.75,
                 k: int = 10, max_retries: int = 10):
        freqs = np.asarray(frequencies, dtype=np.float64)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ConfigError("negative sampler needs a nonempty vocabulary")
        if np.any(freqs <= 0):
            raise ConfigError("sampler frequencies must be positive")
        if k < 0:
            raise ConfigError("negatives per pair must be >= 0")
        self.entity_ids = list(entity_ids)
        self.index = {e: i for i, e in enumerate(self.entity_ids)}
        self.exponent = float(exponent)
        self.k = int(k)
        self.max_retries = int(max_retries)
        weights = freqs ** self.exponent
        self.probabilities = weights / weights.sum()
        self.cdf = np.cumsum(self.probabilities)
        self.cdf[-1] = 1.0

    @classmethod
    def from_corpus(cls, corpus: TrainingCorpus, exponent: float = 0.75, k: int = 10):
        return cls(corpus.entity_ids, corpus.frequencies, exponent, k)

    def _lookup(self, u):
        return np.minimum(np.searchsorted(self.cdf, u, side="right"), len(self.cdf) - 1)

    def sample_indices(self, rng: np.random.Generator, exclude, k: int | None = None) -> np.ndarray:
        """Vectorized draw: one row of ``k`` indices per entry of ``exclude``.

        Draws equal to the row's excluded index are redrawn up to
        ``max_retries`` times, after which they are kept.
        """
        k = self.k if k is None else k
        exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 1)
        out = self._lookup(rng.random((exclude.shape[0], k)))
        for _ in range(self.max_retries):
            bad = out == exclude
            nbad = int(bad.sum())
            if not nbad:
                break
            out[bad] = self._lookup(rng.random(nbad))
        return out


def draw_negatives(sampler: NegativeSampler, rng: np.random.Generator, exclude: str | None = None,
                   k: int | None = None) -> list[str]:
    k = sampler.k if k is None else k
    if k == 0:
        return []
    ex = sampler.index.get(exclude, -1) if exclude is not None else -1
    idx = sampler.sample_indices(rng, [ex], k)[0]
    if ex >= 0 and np.any(idx == ex):
        log.warning("kept %d negatives equal to %r after %d retries",
                    int(np.sum(idx == ex)), exclude, sampler.max_retries)
    return [sampler.entity_ids[i] for i in idx]
