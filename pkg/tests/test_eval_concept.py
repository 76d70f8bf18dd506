import numpy as np
import pytest
from hypothesis import given, strategies as st

from catembed.errors import ConfigError, CoverageError, ParseError
from catembed.eval_concept import (
    CLUSTER_GRID,
    ClusteringResult,
    GoldStandard,
    agglomerative,
    assignment_clustering,
    cluster,
    evaluate_concepts,
    kmeans,
    nn_classify,
    purity,
    read_dataset,
    split_even,
)

from oracles import purity_double_loop


def clusters_of(result):
    return {frozenset(c) for c in result.clusters}


def blobs(rng, centers, per=10, radius=0.1):
    vecs, truth = {}, {}
    for b, center in enumerate(centers):
        for i in range(per):
            angle = rng.uniform(0, 2 * np.pi)
            r = radius * np.sqrt(rng.random())
            vecs[f"b{b}_{i}"] = np.asarray(center) + r * np.array([np.cos(angle), np.sin(angle)])
            truth[f"b{b}_{i}"] = b
    return vecs, truth


def is_partition(result, concepts):
    seen = [c for cl in result.clusters for c in cl]
    return len(seen) == len(set(seen)) and set(seen) == set(concepts) and all(result.clusters)


class TestKMeans:
    def test_k_equals_n(self, rng):
        vecs = {f"p{i}": rng.normal(size=3) for i in range(6)}
        res = kmeans(vecs, 6, seed=1)
        assert clusters_of(res) == {frozenset([p]) for p in vecs}
        assert res.method["inertia"] == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_two_blobs(self, seed):
        vecs, truth = blobs(np.random.default_rng(seed), [(0, 0), (10, 0)])
        res = kmeans(vecs, 2, seed=seed)
        expected = {frozenset(c for c in truth if truth[c] == b) for b in (0, 1)}
        assert clusters_of(res) == expected

    def test_k_one(self, rng):
        vecs = {f"p{i}": rng.normal(size=2) for i in range(5)}
        assert clusters_of(kmeans(vecs, 1)) == {frozenset(vecs)}

    def test_duplicate_points_fill_every_cluster(self):
        vecs = {f"p{i}": np.zeros(2) for i in range(4)}
        res = kmeans(vecs, 3, seed=0)
        assert len(res.clusters) == 3 and is_partition(res, vecs)

    def test_k_zero(self):
        with pytest.raises(ConfigError):
            kmeans({"a": np.zeros(2)}, 0)

    def test_k_too_large(self):
        with pytest.raises(ConfigError):
            kmeans({"a": np.zeros(2)}, 2)


class TestAgglomerative:
    @pytest.mark.parametrize("metric", ["euclidean", "cosine"])
    def test_k_equals_n(self, rng, metric):
        vecs = {f"p{i}": rng.normal(size=3) for i in range(5)}
        res = agglomerative(vecs, 5, metric, "average")
        assert clusters_of(res) == {frozenset([p]) for p in vecs}
        assert res.method["merges"] == []

    @pytest.mark.parametrize("linkage", ["average", "complete"])
    def test_line(self, linkage):
        vecs = {"x0": [0.0], "x1": [1.0], "x10": [10.0], "x11": [11.0]}
        res = agglomerative(vecs, 2, "euclidean", linkage)
        assert clusters_of(res) == {frozenset({"x0", "x1"}), frozenset({"x10", "x11"})}

    def test_average_vs_complete_distances(self):
        vecs = {"a": [0.0], "b": [1.0], "c": [3.0]}
        avg = agglomerative(vecs, 1, "euclidean", "average").method["merges"]
        comp = agglomerative(vecs, 1, "euclidean", "complete").method["merges"]
        assert avg[1][2] == pytest.approx(2.5)
        assert comp[1][2] == pytest.approx(3.0)

    def test_lexicographic_tie_break(self):
        vecs = {"c": [2.0], "a": [0.0], "b": [1.0]}
        merges = agglomerative(vecs, 2, "euclidean", "average").method["merges"]
        assert merges[0][:2] == ("a", "b")

    @pytest.mark.parametrize("linkage", ["average", "complete"])
    def test_cosine_scale_invariance(self, rng, linkage):
        vecs = {f"p{i}": rng.normal(size=4) for i in range(12)}
        scaled = {k: (3.0 * v if i % 2 else v) for i, (k, v) in enumerate(vecs.items())}
        a = agglomerative(vecs, 2, "cosine", linkage).method["merges"]
        b = agglomerative(scaled, 2, "cosine", linkage).method["merges"]
        assert [m[:2] for m in a] == [m[:2] for m in b]
        assert np.allclose([m[2] for m in a], [m[2] for m in b], atol=1e-12)

    def test_bad_linkage(self):
        with pytest.raises(ConfigError):
            agglomerative({"a": [0.0], "b": [1.0]}, 1, "euclidean", "ward")


@given(st.integers(1, 25), st.integers(0, 2**32 - 1), st.sampled_from(CLUSTER_GRID))
def test_clusterings_partition(n, seed, cell):
    rng = np.random.default_rng(seed)
    vecs = {f"p{i}": rng.normal(size=3) for i in range(n)}
    k = int(rng.integers(1, n + 1))
    res = cluster(vecs, k, *cell, seed=seed)
    assert len(res.clusters) == k
    assert is_partition(res, vecs)


class TestPurity:
    gold = GoldStandard({"a1": "A", "a2": "A", "b1": "B", "b2": "B", "b3": "B"})

    def test_identity(self):
        res = ClusteringResult(tuple(self.gold.class_set.values()))
        assert purity(res, self.gold) == 1.0

    def test_mixed(self):
        res = ClusteringResult((frozenset({"a1", "a2", "b1"}), frozenset({"b2", "b3"})))
        assert purity(res, self.gold) == 0.8

    def test_single_cluster(self):
        assert purity(ClusteringResult((frozenset(self.gold.assignments),)), self.gold) == 0.6

    def test_singletons(self):
        res = ClusteringResult(tuple(frozenset([c]) for c in self.gold.assignments))
        assert purity(res, self.gold) == 1.0

    def test_empty(self):
        with pytest.raises(ConfigError):
            purity(ClusteringResult(()), self.gold)

    @given(st.integers(1, 100), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_matches_double_loop_and_bounds(self, n, n_cls, n_clu, seed):
        rng = np.random.default_rng(seed)
        concepts = [f"x{i}" for i in range(n)]
        gold = GoldStandard({c: f"g{int(rng.integers(n_cls))}" for c in concepts})
        labels = rng.integers(n_clu, size=n)
        res = ClusteringResult(tuple(frozenset(c for c, l in zip(concepts, labels) if l == j)
                                     for j in range(n_clu)))
        got = purity(res, gold)
        classes = [set(m) for m in gold.class_set.values()]
        assert got == purity_double_loop([set(c) for c in res.clusters], classes, n)
        assert max(len(m) for m in classes) / n <= got <= 1.0


class TestNearestCategory:
    def test_exact_match(self):
        cats = {"a": np.array([1.0, 2.0]), "b": np.array([5.0, 5.0])}
        assert nn_classify({"x": np.array([5.0, 5.0])}, cats) == {"x": "b"}

    def test_closer(self):
        cats = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 2.0])}
        assert nn_classify({"x": np.zeros(2)}, cats) == {"x": "a"}

    def test_tie(self):
        cats = {"b": np.array([1.0, 0.0]), "a": np.array([-1.0, 0.0])}
        assert nn_classify({"x": np.zeros(2)}, cats) == {"x": "a"}

    def test_cosine_flag(self):
        cats = {"a": np.array([10.0, 0.0]), "b": np.array([0.0, 0.5])}
        x = {"x": np.array([0.0, 3.0])}
        assert nn_classify(x, cats) == {"x": "b"}
        x = {"x": np.array([1.0, 0.1])}
        assert nn_classify(x, cats, metric="euclidean") == {"x": "b"}
        assert nn_classify(x, cats, metric="cosine") == {"x": "a"}

    def test_dimension_mismatch_names_offenders(self):
        with pytest.raises(ConfigError, match="bad"):
            nn_classify({"ok": np.zeros(2), "bad": np.zeros(3)}, {"a": np.zeros(2)})
        with pytest.raises(ConfigError, match="odd"):
            nn_classify({"x": np.zeros(2)}, {"a": np.zeros(2), "b": np.ones(2), "odd": np.zeros(5)})

    def test_no_categories(self):
        with pytest.raises(ConfigError):
            nn_classify({"x": np.zeros(2)}, {})

    @given(st.integers(0, 2**32 - 1))
    def test_translation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        concepts = {f"x{i}": rng.normal(size=4) for i in range(10)}
        cats = {f"c{i}": rng.normal(size=4) for i in range(4)}
        shift = rng.normal(scale=5.0, size=4)
        moved = nn_classify({k: v + shift for k, v in concepts.items()},
                            {k: v + shift for k, v in cats.items()})
        assert moved == nn_classify(concepts, cats)


class TestDataset:
    def test_bundled_dota(self):
        from importlib.resources import files

        gold = read_dataset(files("catembed") / "data" / "dota.tsv")
        assert gold.n == 448  # two repeated philosophy rows merge
        assert len(gold.class_set) == 15
        assert set(gold.tags.values()) == {"single", "mult"}
        assert gold.subset("single").n == 298
        assert gold.subset("mult").n == 150

    def test_conflicting_rows(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("A\tx\nB\tx\n")
        with pytest.raises(ParseError) as info:
            read_dataset(path)
        assert info.value.line == 2

    def test_split_even(self):
        gold = GoldStandard({f"{c}{i}": c for c in "ABC" for i in range(10)})
        val, test = split_even(gold, seed=3)
        assert val.n == test.n == 15
        assert all(len(m) == 5 for m in val.class_set.values())
        assert set(val.assignments).isdisjoint(test.assignments)
        assert split_even(gold, seed=3)[0] == val


def planted_embeddings(rng, n_cls=3, per=8, noise=0.05):
    centers = {f"k{j}": rng.normal(size=5) * 3 for j in range(n_cls)}
    vecs = {f"k{j}_{i}": centers[f"k{j}"] + rng.normal(scale=noise, size=5)
            for j in range(n_cls) for i in range(per)}
    gold = GoldStandard({c: c.split("_")[0] for c in vecs})
    return vecs, centers, gold


class TestEvaluate:
    @pytest.mark.parametrize("protocol", ["nn", "cluster"])
    def test_perfect(self, rng, protocol):
        vecs, cats, gold = planted_embeddings(rng)
        report = evaluate_concepts({"d5": (vecs, cats)}, gold, protocol=protocol)
        assert report.best.test_purity == 1.0
        assert report.lines()[0] == f"protocol={protocol}"
        assert "test_purity=1.000000" in report.lines()
        n_cells = 1 if protocol == "nn" else len(CLUSTER_GRID)
        assert len(report.cells) == n_cells

    def test_selects_better_embedding(self, rng):
        vecs, cats, gold = planted_embeddings(rng)
        noisy = {c: rng.normal(size=5) for c in vecs}
        report = evaluate_concepts({"noise": (noisy, cats), "good": (vecs, cats)}, gold)
        assert report.best.embedding == "good"

    def test_missing_concepts_skipped(self, rng, caplog):
        vecs, cats, gold = planted_embeddings(rng)
        del vecs["k0_0"]
        report = evaluate_concepts({"d": (vecs, cats)}, gold)
        assert report.missing == ["k0_0"]
        assert "missing" in caplog.text

    def test_no_coverage(self, rng):
        _, cats, gold = planted_embeddings(rng)
        with pytest.raises(CoverageError):
            evaluate_concepts({"d": ({"zzz": np.zeros(5)}, cats)}, gold)

    def test_missing_category_vectors(self, rng):
        vecs, cats, gold = planted_embeddings(rng)
        del cats["k1"]
        with pytest.raises(CoverageError, match="k1"):
            evaluate_concepts({"d": (vecs, cats)}, gold, protocol="nn")

    def test_assignment_clustering(self):
        res = assignment_clustering({"x": "a", "y": "b", "z": "a"})
        assert clusters_of(res) == {frozenset({"x", "z"}), frozenset({"y"})}
