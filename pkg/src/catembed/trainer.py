"""CE / HCE training with negative sampling and per-pair SGD.

Both models share one code path: every target entity carries a list of
``(category, weight)`` predictors.  CE uses the direct categories with weight
one; HCE uses the full ancestor set with normalized inverse-distance weights.
Each pair maximizes

    log s(u_c . v_t) + sum_i w_i log s(u_c . g_i)
      + sum_neg [ log s(-u_n . v_t) + sum_i w_i log s(-u_n . g_i) ]

where ``v`` are entity input vectors, ``g`` category vectors and ``u`` entity
output (context) vectors.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .corpus import NegativeSampler, TrainingCorpus, TrainingPair
from .errors import ConfigError, ParseError, TrainingDivergedError
from .hierarchy import AncestorWeights, CategoryDag
from .textio import iter_lines, read_key_values, write_key_values

log = logging.getLogger(__name__)

MAX_DOT = 30.0
_CHUNK = 1 << 16


@dataclass
class TrainConfig:
    model: str = "hce"
    dim: int = 100
    negatives: int = 10
    batch_size: int = 500
    epochs: int = 5
    lr_initial: float = 0.025
    lr_final: float | None = None
    seed: int = 1
    workers: int = 1
    exponent: float = 0.75
    shuffle_buffer: int | None = None
    subsample: float = 0.0
    max_ancestor_depth: int | None = None

    def __post_init__(self):
        if self.lr_final is None:
            self.lr_final = self.lr_initial / 100.0

    def validate(self) -> "TrainConfig":
        if self.model not in ("ce", "hce"):
            raise ConfigError(f"model must be 'ce' or 'hce', got {self.model!r}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.negatives < 1:
            raise ConfigError(f"negatives must be >= 1, got {self.negatives}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.lr_initial >= self.lr_final > 0):
            raise ConfigError("need lr_initial >= lr_final > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.exponent < 0:
            raise ConfigError("smoothing exponent must be >= 0")
        if self.subsample < 0:
            raise ConfigError("subsample threshold must be >= 0")
        if self.shuffle_buffer is not None and self.shuffle_buffer < 1:
            raise ConfigError("shuffle_buffer must be >= 1")
        if self.max_ancestor_depth is not None and self.max_ancestor_depth < 0:
            raise ConfigError("max_ancestor_depth must be >= 0")
        return self

    @classmethod
    def from_mapping(cls, items: Mapping[str, str]) -> "TrainConfig":
        """Build from string values, e.g. a ``key=value`` file or a checkpoint
        sidecar (``config.`` prefixes are accepted)."""
        items = {k.removeprefix("config."): v for k, v in items.items()}
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if raw in ("None", ""):
                kwargs[f.name] = None
                continue
            typ = str(f.type)
            try:
                if typ.startswith("int"):
                    kwargs[f.name] = int(raw)
                elif typ.startswith("float"):
                    kwargs[f.name] = float(raw)
                else:
                    kwargs[f.name] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
        return cls(**kwargs)


@dataclass
class EmbeddingStore:
    entity_ids: list[str]
    category_ids: list[str]
    entity_in: np.ndarray
    entity_out: np.ndarray
    category_in: np.ndarray
    entity_index: dict[str, int] = field(init=False, repr=False)
    category_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.entity_ids = list(self.entity_ids)
        self.category_ids = list(self.category_ids)
        self.entity_index = {e: i for i, e in enumerate(self.entity_ids)}
        self.category_index = {c: i for i, c in enumerate(self.category_ids)}
        if len(self.entity_index) != len(self.entity_ids):
            raise ConfigError("duplicate entity ids")
        if len(self.category_index) != len(self.category_ids):
            raise ConfigError("duplicate category ids")
        d = self.entity_in.shape[1]
        if d < 1:
            raise ConfigError("embedding dimension must be >= 1")
        if self.entity_in.shape != (len(self.entity_ids), d) or self.entity_out.shape != self.entity_in.shape:
            raise ConfigError("entity matrices do not match the vocabulary")
        if self.category_in.shape != (len(self.category_ids), d):
            raise ConfigError("category matrix does not match the category registry")

    @property
    def dim(self) -> int:
        return int(self.entity_in.shape[1])

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.entity_ids, self.category_ids, self.entity_in.copy(),
                              self.entity_out.copy(), self.category_in.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_in).all() and np.isfinite(self.entity_out).all()
                    and np.isfinite(self.category_in).all())

    def entity_vector(self, entity: str) -> np.ndarray:
        return self.entity_in[self.entity_index[entity]]

    def category_vector(self, category: str) -> np.ndarray:
        return self.category_in[self.category_index[category]]

    def vector(self, label: str) -> np.ndarray:
        """Look up ``e:<id>`` / ``c:<id>`` style labels."""
        kind, _, name = label.partition(":")
        if kind == "e":
            return self.entity_vector(name)
        if kind == "c":
            return self.category_vector(name)
        raise KeyError(label)


def init_model(entity_ids: Sequence[str] | int, category_ids: Sequence[str] | int,
               dim: int, seed: int) -> EmbeddingStore:
    """Input vectors uniform in [-0.5/dim, 0.5/dim]; output vectors zero."""
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    if isinstance(entity_ids, int):
        entity_ids = [f"e{i}" for i in range(entity_ids)]
    if isinstance(category_ids, int):
        category_ids = [f"c{i}" for i in range(category_ids)]
    rng = np.random.default_rng(seed)
    ein = (rng.random((len(entity_ids), dim)) - 0.5) / dim
    cin = (rng.random((len(category_ids), dim)) - 0.5) / dim
    eout = np.zeros((len(entity_ids), dim))
    return EmbeddingStore(list(entity_ids), list(category_ids), ein, eout, cin)


def softmax_prob(store: EmbeddingStore, target: str, context: str) -> float:
    """Full-softmax probability of ``context`` given ``target`` (iterates the vocabulary)."""
    t = store.entity_index[target]
    c = store.entity_index[context]
    scores = store.entity_out @ store.entity_in[t]
    scores -= scores.max()
    p = np.exp(scores)
    return float(p[c] / p.sum())


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def _pair_update(ein, eout, cin, t, c, negs, cats, ws, lr, g_in, g_cat, g_out):
    """One ascent step on a single pair.  Returns the pair loss, or NaN if a
    gradient was non-finite (nothing is written in that case)."""
    d = ein.shape[1]
    m = cats.shape[0]
    k = negs.shape[0]
    for j in range(d):
        g_in[j] = 0.0
    for p in range(m):
        for j in range(d):
            g_cat[p, j] = 0.0
    loss = 0.0
    for o in range(k + 1):
        if o == 0:
            row = c
            sign = 1.0
        else:
            row = negs[o - 1]
            sign = -1.0
        for j in range(d):
            g_out[o, j] = 0.0
        for p in range(m + 1):
            if p == 0:
                w = 1.0
                dot = 0.0
                for j in range(d):
                    dot += eout[row, j] * ein[t, j]
            else:
                w = ws[p - 1]
                dot = 0.0
                for j in range(d):
                    dot += eout[row, j] * cin[cats[p - 1], j]
            x = sign * dot
            if x > MAX_DOT:
                loss -= w * _log_sigmoid(MAX_DOT)
                continue
            if x < -MAX_DOT:
                loss -= w * _log_sigmoid(-MAX_DOT)
                continue
            loss -= w * _log_sigmoid(x)
            # d/dx log s(x) = 1 - s(x) = s(-x)
            coef = sign * w / (1.0 + math.exp(x))
            if p == 0:
                for j in range(d):
                    g_out[o, j] += coef * ein[t, j]
                    g_in[j] += coef * eout[row, j]
            else:
                q = cats[p - 1]
                for j in range(d):
                    g_out[o, j] += coef * cin[q, j]
                    g_cat[p - 1, j] += coef * eout[row, j]

    ok = math.isfinite(loss)
    for j in range(d):
        ok = ok and math.isfinite(g_in[j])
    for p in range(m):
        for j in range(d):
            ok = ok and math.isfinite(g_cat[p, j])
    for o in range(k + 1):
        for j in range(d):
            ok = ok and math.isfinite(g_out[o, j])
    if not ok:
        return math.nan

    for j in range(d):
        ein[t, j] += lr * g_in[j]
    for p in range(m):
        q = cats[p]
        for j in range(d):
            cin[q, j] += lr * g_cat[p, j]
    for j in range(d):
        eout[c, j] += lr * g_out[0, j]
    for o in range(k):
        r = negs[o]
        for j in range(d):
            eout[r, j] += lr * g_out[o + 1, j]
    return loss


@njit(cache=True, nogil=True)
def _train_block(ein, eout, cin, targets, contexts, negs, cat_ptr, cat_idx, cat_w, lrs, losses):
    d = ein.shape[1]
    kmax = negs.shape[1]
    mmax = 1
    for e in range(cat_ptr.shape[0] - 1):
        mmax = max(mmax, cat_ptr[e + 1] - cat_ptr[e])
    g_in = np.empty(d)
    g_cat = np.empty((mmax, d))
    g_out = np.empty((kmax + 1, d))
    for i in range(targets.shape[0]):
        t = targets[i]
        lo = cat_ptr[t]
        hi = cat_ptr[t + 1]
        loss = _pair_update(ein, eout, cin, t, contexts[i], negs[i], cat_idx[lo:hi],
                            cat_w[lo:hi], lrs[i], g_in, g_cat, g_out)
        if math.isnan(loss):
            return i
        losses[i] = loss
    return -1


def _resolve_weights(store: EmbeddingStore, weights) -> tuple[np.ndarray, np.ndarray]:
    if weights is None:
        return np.empty(0, np.int64), np.empty(0)
    if isinstance(weights, AncestorWeights):
        items = [(c, w) for c, _, w in weights.entries]
    elif isinstance(weights, Mapping):
        items = list(weights.items())
    else:
        items = list(weights)
    idx = np.array([store.category_index[c] for c, _ in items], dtype=np.int64)
    w = np.array([float(x) for _, x in items])
    return idx, w


def pair_step(store: EmbeddingStore, pair: TrainingPair, negatives: Sequence[str],
              weights=None, lr: float = 0.025) -> float:
    """Apply one SGD step for ``pair`` and return its loss (``-L_pair``).

    ``weights`` are the category predictors of the target: an
    :class:`AncestorWeights`, a ``{category: w}`` mapping, ``(category, w)``
    pairs, or ``None`` for entity-only training.
    """
    t = store.entity_index[pair.target]
    c = store.entity_index[pair.context]
    negs = np.array([store.entity_index[n] for n in negatives], dtype=np.int64)
    cats, ws = _resolve_weights(store, weights)
    d = store.dim
    loss = _pair_update(store.entity_in, store.entity_out, store.category_in, t, c, negs,
                        cats, ws, float(lr), np.empty(d), np.empty((max(len(cats), 1), d)),
                        np.empty((len(negs) + 1, d)))
    if math.isnan(loss):
        raise TrainingDivergedError(
            f"non-finite gradient at pair ({pair.target}, {pair.context}) "
            f"with negatives {list(negatives)}"
        )
    return loss


def predictor_table(store: EmbeddingStore, dag: CategoryDag, model: str,
                    max_depth: int | None = None):
    """CSR arrays ``(ptr, category_index, weight)`` of category predictors per entity."""
    ptr = np.zeros(len(store.entity_ids) + 1, dtype=np.int64)
    idx: list[int] = []
    wts: list[float] = []
    for i, e in enumerate(store.entity_ids):
        if e in dag.entity_labels:
            if model == "ce":
                items = [(c, 1.0) for c in sorted(dag.entity_labels[e])]
            else:
                items = [(c, w) for c, _, w in dag.ancestor_weights(e, max_depth).entries]
            for c, w in items:
                idx.append(store.category_index[c])
                wts.append(w)
        ptr[i + 1] = len(idx)
    return ptr, np.array(idx, dtype=np.int64), np.array(wts, dtype=np.float64)


@dataclass
class TrainResult:
    store: EmbeddingStore
    batch_losses: list[float]
    epoch_losses: list[float]
    config: TrainConfig
    rng_state: dict | None = None


def _lr_schedule(cfg: TrainConfig, steps: np.ndarray, total_steps: int) -> np.ndarray:
    # constant within each batch of B pairs, linear from first to last batch
    batches = max(math.ceil(total_steps / cfg.batch_size), 1)
    frac = (steps // cfg.batch_size) / max(batches - 1, 1)
    return cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac


def train(corpus: TrainingCorpus, dag: CategoryDag, config: TrainConfig,
          store: EmbeddingStore | None = None) -> TrainResult:
    cfg = config.validate()
    if corpus.pair_count == 0:
        raise ConfigError("empty corpus")
    if store is None:
        store = init_model(corpus.entity_ids, sorted(dag.category_ids), cfg.dim, cfg.seed)
    elif store.entity_ids != corpus.entity_ids:
        raise ConfigError("warm-start store vocabulary does not match the corpus")

    unlabeled = [e for e in corpus.target_ids if e not in dag.entity_labels]
    if unlabeled:
        log.warning("%d target entities have no categories; training them entity-only",
                    len(unlabeled))
    ptr, cat_idx, cat_w = predictor_table(store, dag, cfg.model, cfg.max_ancestor_depth)
    sampler = NegativeSampler.from_corpus(corpus, cfg.exponent, cfg.negatives)
    rng = np.random.default_rng(cfg.seed)

    keep_prob = None
    if cfg.subsample > 0:
        f = corpus.frequencies / corpus.frequencies.sum()
        keep_prob = np.minimum(1.0, np.sqrt(cfg.subsample / f) + cfg.subsample / f)

    total_steps = corpus.pair_count * cfg.epochs
    step = 0
    batch_losses: list[float] = []
    epoch_losses: list[float] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            order = corpus.epoch_order(rng, cfg.shuffle_buffer)
            if keep_prob is not None:
                order = order[rng.random(order.shape[0]) < keep_prob[corpus.contexts[order]]]
            losses = np.zeros(order.shape[0])
            for lo in range(0, order.shape[0], _CHUNK):
                sel = order[lo:lo + _CHUNK]
                tg = corpus.targets[sel]
                cx = corpus.contexts[sel]
                negs = sampler.sample_indices(rng, cx)
                lrs = _lr_schedule(cfg, step + np.arange(sel.shape[0]), total_steps)
                out = losses[lo:lo + sel.shape[0]]
                bad = _run_chunk(pool, cfg.workers, store, tg, cx, negs, ptr, cat_idx, cat_w, lrs, out)
                if bad >= 0:
                    raise TrainingDivergedError(
                        f"non-finite gradient at epoch {epoch}, pair "
                        f"({corpus.entity_ids[tg[bad]]}, {corpus.entity_ids[cx[bad]]}), "
                        f"lr={lrs[bad]:.3g}"
                    )
                step += sel.shape[0]
            epoch_losses.append(float(losses.mean()) if losses.size else float("nan"))
            for b in range(0, losses.shape[0], cfg.batch_size):
                batch_losses.append(float(losses[b:b + cfg.batch_size].mean()))
            log.info("epoch %d mean loss %.6f", epoch, epoch_losses[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(store, batch_losses, epoch_losses, cfg, rng.bit_generator.state)


def _run_chunk(pool, workers, store, tg, cx, negs, ptr, cat_idx, cat_w, lrs, out) -> int:
    args = (store.entity_in, store.entity_out, store.category_in)
    if pool is None:
        return _train_block(*args, tg, cx, negs, ptr, cat_idx, cat_w, lrs, out)
    # hogwild: workers write the shared matrices without locks
    bounds = np.linspace(0, tg.shape[0], workers + 1).astype(np.int64)
    futures = [
        pool.submit(_train_block, *args, tg[a:b], cx[a:b], negs[a:b], ptr, cat_idx, cat_w,
                    lrs[a:b], out[a:b])
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    for (a, _), fut in zip(zip(bounds[:-1], bounds[1:]), futures):
        r = fut.result()
        if r >= 0:
            return int(a + r)
    return -1


# --- embedding files -------------------------------------------------------

def _format_rows(fh, prefix: str, ids: Sequence[str], mat: np.ndarray) -> None:
    for name, row in zip(ids, mat):
        if not name or any(ch.isspace() for ch in name):
            raise ConfigError(f"id {name!r} cannot be written: contains whitespace")
        fh.write(prefix + name + " " + " ".join(f"{v:.9g}" for v in row) + "\n")


def export_embeddings(store: EmbeddingStore, path: str | os.PathLike, which: str = "both",
                      matrix: str = "in") -> None:
    """Write ``count dim`` then ``e:<id> v1 ... vd`` / ``c:<id> ...`` rows.

    ``matrix="out"`` writes the entity output vectors instead of the input
    vectors (used for checkpoints).
    """
    if which not in ("entities", "categories", "both"):
        raise ConfigError(f"which must be entities, categories or both, got {which!r}")
    ent = store.entity_out if matrix == "out" else store.entity_in
    n = 0
    if which in ("entities", "both"):
        n += len(store.entity_ids)
    if which in ("categories", "both"):
        n += len(store.category_ids)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{n} {store.dim}\n")
            if which in ("entities", "both"):
                _format_rows(fh, "e:", store.entity_ids, ent)
            if which in ("categories", "both"):
                _format_rows(fh, "c:", store.category_ids, store.category_in)
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc


def import_embeddings(path: str | os.PathLike) -> EmbeddingStore:
    """Read an embedding file.  Output vectors come back as zeros."""
    lines = iter_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError("empty embedding file", path, 1) from None
    parts = header.split()
    try:
        count, dim = int(parts[0]), int(parts[1])
        if len(parts) != 2 or dim < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise ParseError("header must be '<count> <dim>'", path, lineno) from None
    ents, ent_rows, cats, cat_rows = [], [], [], []
    for lineno, text in lines:
        label, *vals = text.split(" ")
        if len(vals) != dim:
            raise ParseError(f"expected {dim} values, got {len(vals)}", path, lineno)
        try:
            row = [float(v) for v in vals]
        except ValueError:
            raise ParseError("non-numeric vector value", path, lineno) from None
        if label.startswith("e:"):
            ents.append(label[2:])
            ent_rows.append(row)
        elif label.startswith("c:"):
            cats.append(label[2:])
            cat_rows.append(row)
        else:
            raise ParseError(f"label {label!r} lacks an e: or c: prefix", path, lineno)
    if len(ents) + len(cats) != count:
        raise ParseError(f"header announces {count} rows, found {len(ents) + len(cats)}", path, 1)
    ein = np.array(ent_rows, dtype=np.float64).reshape(len(ents), dim)
    cin = np.array(cat_rows, dtype=np.float64).reshape(len(cats), dim)
    return EmbeddingStore(ents, cats, ein, np.zeros_like(ein), cin)


def save_checkpoint(result: TrainResult, path: str | os.PathLike, epoch: int | None = None) -> None:
    """Embedding file at ``path``, output vectors at ``path.out``, metadata at ``path.meta``."""
    store = result.store
    export_embeddings(store, path, "both")
    export_embeddings(store, f"{path}.out", "entities", matrix="out")
    meta = {f"config.{k}": v for k, v in asdict(result.config).items()}
    meta["epoch"] = len(result.epoch_losses) if epoch is None else epoch
    if result.rng_state is not None:
        meta["rng.bit_generator"] = result.rng_state["bit_generator"]
        meta["rng.state"] = result.rng_state["state"]["state"]
        meta["rng.inc"] = result.rng_state["state"]["inc"]
    write_key_values(f"{path}.meta", meta)


def load_checkpoint(path: str | os.PathLike) -> tuple[EmbeddingStore, dict[str, str]]:
    store = import_embeddings(path)
    out = import_embeddings(f"{path}.out")
    if out.entity_ids != store.entity_ids:
        raise ParseError("checkpoint output vectors do not match entity rows", f"{path}.out")
    store.entity_out[:] = out.entity_in
    return store, read_key_values(f"{path}.meta")
