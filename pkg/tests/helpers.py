"""Test-side helpers that drive the package (kept apart from the pure oracles)."""

from catembed.corpus import TrainingPair
from catembed.trainer import EmbeddingStore, pair_step

from oracles import finite_difference_check, relative_error


def random_store(rng, n_ent, n_cat, dim, scale=0.5):
    ein = rng.uniform(-scale, scale, (n_ent, dim))
    eout = rng.uniform(-scale, scale, (n_ent, dim))
    cin = rng.uniform(-scale, scale, (n_cat, dim))
    return EmbeddingStore([f"e{i}" for i in range(n_ent)], [f"c{i}" for i in range(n_cat)],
                          ein, eout, cin)


def gradient_error(rng, dim, k, n_cats, n_ent=8, n_cat=4):
    """Largest relative error between the SGD step at lr=1 and central differences."""
    store = random_store(rng, n_ent, n_cat, dim)
    t, c = (int(x) for x in rng.integers(0, n_ent, 2))
    negs = [int(x) for x in rng.integers(0, n_ent, k)]
    cats = [int(x) for x in rng.choice(n_cat, n_cats, replace=False)]
    w = rng.random(n_cats)
    w = list(w / w.sum()) if n_cats else []
    numeric = finite_difference_check(store, t, c, negs, cats, w)
    before = store.copy()
    pair_step(store, TrainingPair(f"e{t}", f"e{c}"), [f"e{n}" for n in negs],
              [(f"c{g}", x) for g, x in zip(cats, w)], lr=1.0)
    worst = 0.0
    for (name, row), g in numeric.items():
        analytic = getattr(before, name)[row] - getattr(store, name)[row]
        worst = max(worst, relative_error(analytic, g))
    return worst
