import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from catembed.corpus import TrainingPair, load_corpus
from catembed.errors import ConfigError, ParseError, TrainingDivergedError
from catembed.hierarchy import load_hierarchy
from catembed.synthetic import planted_corpus
from catembed.trainer import (
    TrainConfig,
    export_embeddings,
    import_embeddings,
    init_model,
    load_checkpoint,
    pair_step,
    save_checkpoint,
    softmax_prob,
    train,
)

from helpers import gradient_error, random_store
from oracles import finite_difference_check, pair_loss, relative_error

LN2 = math.log(2.0)


def zero_store(n_ent=6, n_cat=3, dim=4):
    s = init_model(n_ent, n_cat, dim, seed=0)
    s.entity_in[:] = 0.0
    s.category_in[:] = 0.0
    return s


class TestInit:
    def test_range(self):
        s = init_model(30, 7, 50, seed=3)
        assert np.all(np.abs(s.entity_in) <= 0.01)
        assert np.all(np.abs(s.category_in) <= 0.01)
        assert s.entity_in.std() > 0.001

    def test_deterministic(self):
        a = init_model(10, 4, 8, seed=5)
        b = init_model(10, 4, 8, seed=5)
        assert a.entity_in.tobytes() == b.entity_in.tobytes()
        assert a.category_in.tobytes() == b.category_in.tobytes()
        assert not np.array_equal(a.entity_in, init_model(10, 4, 8, seed=6).entity_in)

    def test_output_zero(self):
        assert not init_model(10, 4, 8, seed=5).entity_out.any()

    def test_dim_zero(self):
        with pytest.raises(ConfigError):
            init_model(3, 1, 0, seed=1)


class TestSoftmax:
    def test_identical_outputs_uniform(self):
        s = init_model(7, 1, 5, seed=0)
        s.entity_out[:] = 0.3
        for e in s.entity_ids:
            assert softmax_prob(s, "e0", e) == pytest.approx(1 / 7, abs=1e-15)

    def test_two_entities(self):
        s = init_model(2, 1, 2, seed=0)
        s.entity_in[0] = [1.0, 0.0]
        s.entity_out[0] = [1.0, 0.0]
        s.entity_out[1] = [0.0, 0.0]
        e = math.e
        assert softmax_prob(s, "e0", "e0") == pytest.approx(e / (e + 1), abs=1e-15)
        assert softmax_prob(s, "e0", "e1") == pytest.approx(1 / (e + 1), abs=1e-15)
        assert round(softmax_prob(s, "e0", "e0"), 4) == 0.7311

    def test_large_dots_do_not_overflow(self):
        s = init_model(3, 1, 1, seed=0)
        s.entity_in[:] = 100.0
        s.entity_out[:, 0] = [10.0, 9.99, -5.0]
        p = softmax_prob(s, "e0", "e0")
        assert 0 < p < 1 and math.isfinite(p)

    def test_sums_to_one(self, rng):
        s = random_store(rng, 100, 1, 10, scale=1.0)
        total = sum(softmax_prob(s, "e3", e) for e in s.entity_ids)
        assert abs(total - 1.0) <= 1e-12


class TestPairStep:
    @pytest.mark.parametrize("k", [0, 1, 5, 10])
    def test_zero_store_no_categories(self, k):
        s = zero_store(n_ent=12)
        negs = [f"e{i + 2}" for i in range(k)]
        assert pair_step(s, TrainingPair("e0", "e1"), negs) == pytest.approx((1 + k) * LN2, abs=1e-12)

    def test_zero_store_one_category(self):
        s = zero_store()
        loss = pair_step(s, TrainingPair("e0", "e1"), ["e2"], {"c0": 1.0})
        assert loss == pytest.approx(4 * LN2, abs=1e-12)

    @given(st.integers(0, 6), st.lists(st.floats(0.0, 1.0), max_size=3))
    def test_zero_store_lower_bound(self, k, ws):
        s = zero_store(n_ent=10, n_cat=3)
        weights = [(f"c{i}", w) for i, w in enumerate(ws)]
        loss = pair_step(s, TrainingPair("e0", "e1"), [f"e{i + 2}" for i in range(k)], weights)
        assert loss == pytest.approx((1 + k) * (1 + sum(ws)) * LN2, abs=1e-12)

    def test_matches_oracle_loss(self, rng):
        s = random_store(rng, 6, 3, 5)
        expected = pair_loss(s.entity_in[0], s.entity_out[1], [s.entity_out[2], s.entity_out[3]],
                             [s.category_in[0], s.category_in[2]], [0.7, 0.3])
        got = pair_step(s, TrainingPair("e0", "e1"), ["e2", "e3"], {"c0": 0.7, "c2": 0.3})
        assert got == pytest.approx(expected, rel=1e-12)
        assert got >= 0

    def test_gradient_d5(self, rng):
        for _ in range(10):
            assert gradient_error(rng, 5, int(rng.integers(1, 6)), int(rng.integers(0, 4))) < 1e-4

    def test_repeated_negative_rows(self, rng):
        # the same output row used as context and twice as a negative
        store = random_store(rng, 4, 2, 5)
        numeric = finite_difference_check(store, 0, 1, [1, 1], [0], [1.0])
        before = store.copy()
        pair_step(store, TrainingPair("e0", "e1"), ["e1", "e1"], {"c0": 1.0}, lr=1.0)
        for (name, row), g in numeric.items():
            assert relative_error(getattr(before, name)[row] - getattr(store, name)[row], g) < 1e-4

    def test_clamped_dot_has_zero_gradient(self):
        s = init_model(3, 1, 1, seed=0)
        s.entity_in[0] = 40.0
        s.entity_out[1] = 1.0
        s.entity_out[2] = -1.0
        before = s.copy()
        loss = pair_step(s, TrainingPair("e0", "e1"), ["e2"], lr=0.5)
        assert math.isfinite(loss)
        assert np.array_equal(s.entity_in, before.entity_in)

    def test_non_finite_reports_pair(self):
        s = init_model(3, 1, 2, seed=0)
        s.entity_in[0] = np.nan
        with pytest.raises(TrainingDivergedError, match="e0, e1"):
            pair_step(s, TrainingPair("e0", "e1"), ["e2"])


def flat_setup(n=30, seed=0):
    rng = np.random.default_rng(seed)
    ents = [f"x{i}" for i in range(n)]
    articles = [(ents[i], [ents[int(j)] for j in rng.integers(0, n, 6)]) for i in range(n) for _ in range(3)]
    labels = [(e, f"k{i % 3}") for i, e in enumerate(ents)]
    return load_corpus(articles), load_hierarchy([], labels)


class TestTrain:
    def test_empty_corpus(self):
        with pytest.raises(ConfigError):
            train(load_corpus([]), load_hierarchy([], []), TrainConfig(dim=4))

    @pytest.mark.parametrize("field,value", [("dim", 0), ("negatives", 0), ("model", "x"),
                                             ("lr_initial", -1.0), ("batch_size", 0)])
    def test_bad_config(self, field, value):
        corpus, dag = flat_setup()
        with pytest.raises(ConfigError):
            train(corpus, dag, TrainConfig(**{field: value}))

    def test_ce_equals_hce_on_flat_hierarchy(self):
        corpus, dag = flat_setup()
        a = train(corpus, dag, TrainConfig(model="ce", dim=8, epochs=3, seed=4, batch_size=50))
        b = train(corpus, dag, TrainConfig(model="hce", dim=8, epochs=3, seed=4, batch_size=50))
        assert a.batch_losses == b.batch_losses
        assert a.store.entity_in.tobytes() == b.store.entity_in.tobytes()
        assert a.store.category_in.tobytes() == b.store.category_in.tobytes()

    def test_ce_differs_from_hce_with_ancestors(self):
        corpus, _ = flat_setup()
        dag = load_hierarchy([(f"k{i}", "top") for i in range(3)],
                             [(f"x{i}", f"k{i % 3}") for i in range(30)])
        a = train(corpus, dag, TrainConfig(model="ce", dim=8, epochs=1, seed=4))
        b = train(corpus, dag, TrainConfig(model="hce", dim=8, epochs=1, seed=4))
        assert a.batch_losses != b.batch_losses

    def test_zero_epochs_is_init(self):
        corpus, dag = flat_setup()
        res = train(corpus, dag, TrainConfig(dim=8, epochs=0, seed=9))
        init = init_model(corpus.entity_ids, sorted(dag.category_ids), 8, 9)
        assert res.store.entity_in.tobytes() == init.entity_in.tobytes()
        assert res.store.category_in.tobytes() == init.category_in.tobytes()
        assert not res.store.entity_out.any()
        assert res.epoch_losses == []

    def test_deterministic(self):
        corpus, dag = flat_setup()
        cfg = TrainConfig(dim=8, epochs=2, seed=11)
        a, b = train(corpus, dag, cfg), train(corpus, dag, cfg)
        assert a.batch_losses == b.batch_losses
        assert a.store.entity_out.tobytes() == b.store.entity_out.tobytes()

    def test_batch_trace_length(self):
        corpus, dag = flat_setup()
        res = train(corpus, dag, TrainConfig(dim=4, epochs=2, batch_size=100))
        assert len(res.batch_losses) == 2 * math.ceil(corpus.pair_count / 100)
        assert all(x >= 0 for x in res.batch_losses)

    def test_unlabeled_targets_warn(self, caplog):
        corpus, _ = flat_setup()
        dag = load_hierarchy([], [("x0", "k0")])
        train(corpus, dag, TrainConfig(dim=4, epochs=1))
        assert "no categories" in caplog.text

    def test_finite_over_50_epochs(self):
        data = planted_corpus(per_category=8, repeats=10, seed=1)
        corpus = load_corpus(data.articles)
        dag = load_hierarchy(data.edges, data.labels)
        res = train(corpus, dag, TrainConfig(dim=20, epochs=50, seed=1))
        assert res.store.is_finite()
        assert all(math.isfinite(x) for x in res.epoch_losses)

    def test_loss_decreases_on_planted_corpus(self):
        data = planted_corpus(per_category=10, repeats=15, seed=3)
        corpus = load_corpus(data.articles)
        dag = load_hierarchy(data.edges, data.labels)
        res = train(corpus, dag, TrainConfig(dim=20, epochs=5, seed=3))
        assert all(b < a for a, b in zip(res.epoch_losses, res.epoch_losses[1:]))

    def test_multi_worker_converges(self):
        data = planted_corpus(per_category=10, repeats=15, seed=3)
        corpus = load_corpus(data.articles)
        dag = load_hierarchy(data.edges, data.labels)
        one = train(corpus, dag, TrainConfig(dim=20, epochs=4, seed=3))
        many = train(corpus, dag, TrainConfig(dim=20, epochs=4, seed=3, workers=3))
        assert many.epoch_losses[-1] < many.epoch_losses[0]
        assert many.epoch_losses[-1] == pytest.approx(one.epoch_losses[-1], rel=0.05)

    def test_warm_start_continues(self):
        corpus, dag = flat_setup()
        first = train(corpus, dag, TrainConfig(dim=8, epochs=1, seed=2))
        again = train(corpus, dag, TrainConfig(dim=8, epochs=1, seed=3), store=first.store.copy())
        assert again.epoch_losses[0] < first.epoch_losses[0]


class TestExport:
    def test_two_entities(self, tmp_path):
        s = init_model(["a", "b"], [], 3, seed=0)
        path = tmp_path / "emb.txt"
        export_embeddings(s, path, "entities")
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[0] == "2 3"
        assert lines[1].startswith("e:a ") and len(lines[1].split()) == 4

    def test_categories_only_header(self, tmp_path):
        s = init_model(5, 4, 6, seed=0)
        path = tmp_path / "emb.txt"
        export_embeddings(s, path, "categories")
        text = path.read_text().splitlines()
        assert text[0] == "4 6"
        assert all(line.startswith("c:") for line in text[1:])

    def test_round_trip_fixed_point(self, tmp_path, rng):
        s = random_store(rng, 5, 3, 7)
        first, second = tmp_path / "a.txt", tmp_path / "b.txt"
        export_embeddings(s, first)
        back = import_embeddings(first)
        export_embeddings(back, second)
        assert first.read_bytes() == second.read_bytes()
        assert np.allclose(back.entity_in, s.entity_in, rtol=1e-8, atol=0)
        assert back.category_ids == s.category_ids

    def test_whitespace_id_rejected(self, tmp_path):
        s = init_model(["a b"], [], 2, seed=0)
        with pytest.raises(ConfigError):
            export_embeddings(s, tmp_path / "x.txt")

    def test_bad_file(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("1 2\ne:a 0.1\n")
        with pytest.raises(ParseError) as info:
            import_embeddings(path)
        assert info.value.line == 2

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError, match="nope"):
            export_embeddings(init_model(1, 0, 2, seed=0), tmp_path / "nope" / "x.txt")

    def test_checkpoint_round_trip(self, tmp_path):
        corpus, dag = flat_setup()
        res = train(corpus, dag, TrainConfig(dim=6, epochs=1, seed=2))
        path = tmp_path / "ckpt.txt"
        save_checkpoint(res, path)
        store, meta = load_checkpoint(path)
        assert np.allclose(store.entity_out, res.store.entity_out, rtol=1e-8)
        assert meta["config.dim"] == "6"
        assert meta["epoch"] == "1"
        assert "rng.state" in meta
        assert TrainConfig.from_mapping(meta).dim == 6
