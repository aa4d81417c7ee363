import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagpipes import (
    build_graph,
    load_graph,
    make_corpus,
    make_high_label_split,
    make_low_label_split,
    sample_ego,
    small_demo,
    write_graph,
)
from tagpipes.errors import (
    FormatError,
    InsufficientClassError,
    InsufficientNodesError,
    ValidationError,
)


def line_graph(n=4):
    texts = [f"doc number {i}" for i in range(n)]
    labels = [i % 2 for i in range(n)]
    return build_graph(texts, labels, ["even", "odd"], [(i, i + 1) for i in range(n - 1)])


class TestBuildGraph:
    def test_symmetry_and_dedup(self):
        g = build_graph(["a b", "c d"], [0, 1], ["x", "y"], [(0, 1), (1, 0), (0, 1)])
        assert g.degree(0) == 1 and g.degree(1) == 1
        assert g.edge_count == 1
        assert list(g.neighbors(0)) == [1]

    def test_self_loops_never_stored(self):
        g = build_graph(["a", "b"], [0, 0], ["x"], [(0, 0), (0, 1)])
        assert g.edge_count == 1
        assert 0 not in g.neighbors(0)

    def test_empty_adjacency(self):
        g = build_graph(["only doc"], [0], ["x"], [])
        assert g.node_count == 1 and g.edge_count == 0
        g.validate()

    def test_directed_source_flag(self):
        sym = build_graph(["a", "b"], [0, 0], ["x"], [(0, 1), (1, 0)])
        one_way = build_graph(["a", "b"], [0, 0], ["x"], [(0, 1)])
        assert not sym.directed_source
        assert one_way.directed_source
        assert np.array_equal(sym.indices, one_way.indices)

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError):
            build_graph(["a"], [3], ["x"], [])

    def test_dangling_edge(self):
        with pytest.raises(ValidationError):
            build_graph(["a", "b"], [0, 0], ["x"], [(0, 5)])


class TestIO:
    def test_json_round_trip(self, tmp_path, demo_graph):
        path = tmp_path / "g.json"
        write_graph(demo_graph, path, "json")
        again = load_graph(path, "json")
        assert again.texts == demo_graph.texts
        assert np.array_equal(again.labels, demo_graph.labels)
        assert again.class_names == demo_graph.class_names
        assert np.array_equal(again.indptr, demo_graph.indptr)
        assert np.array_equal(again.indices, demo_graph.indices)

    def test_csv_pair_round_trip(self, tmp_path, demo_graph):
        path = tmp_path / "gdir"
        write_graph(demo_graph, path, "csv-pair")
        again = load_graph(path, "csv-pair")
        assert again.texts == demo_graph.texts
        assert np.array_equal(again.labels, demo_graph.labels)
        assert np.array_equal(again.indices, demo_graph.indices)

    def test_csv_quoting_survives_commas(self, tmp_path):
        g = build_graph(['text, with "commas"', "plain"], [0, 0], ["x"], [(0, 1)])
        path = tmp_path / "gdir"
        write_graph(g, path, "csv-pair")
        assert load_graph(path, "csv-pair").texts == g.texts

    def test_invalid_json_reports_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(FormatError) as err:
            load_graph(path, "json")
        assert "bad.json" in str(err.value)

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nodes": [], "edges": []}), encoding="utf-8")
        with pytest.raises(FormatError):
            load_graph(path, "json")

    def test_label_out_of_range_on_load(self, tmp_path):
        payload = {
            "class_names": ["x"],
            "nodes": [{"id": 0, "text": "a", "label": 4}],
            "edges": [],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(ValidationError):
            load_graph(path, "json")

    def test_dangling_edge_on_load(self, tmp_path):
        payload = {
            "class_names": ["x"],
            "nodes": [{"id": 0, "text": "a", "label": 0}],
            "edges": [[0, 9]],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(ValidationError):
            load_graph(path, "json")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            load_graph(tmp_path / "g.bin", "parquet")


class TestLowLabelSplit:
    def test_sizes_seven_classes(self, cora_graph):
        split = make_low_label_split(cora_graph, seed=0)
        assert split.train.size == 140
        assert split.validation.size == 500
        assert split.test.size == 1000

    def test_twenty_per_class(self, cora_graph):
        split = make_low_label_split(cora_graph, seed=3)
        counts = np.bincount(cora_graph.labels[split.train], minlength=cora_graph.num_classes)
        assert (counts == 20).all()

    def test_deterministic(self, cora_graph):
        a = make_low_label_split(cora_graph, seed=5)
        b = make_low_label_split(cora_graph, seed=5)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.validation, b.validation)
        assert np.array_equal(a.test, b.test)

    def test_insufficient_class(self):
        g = line_graph(30)  # 15 per class < 20
        with pytest.raises(InsufficientClassError):
            make_low_label_split(g, seed=0)

    def test_insufficient_pool(self, demo_graph):
        with pytest.raises(InsufficientNodesError):
            make_low_label_split(demo_graph, seed=0)  # default 500+1000 pool

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_disjoint_every_seed(self, demo_graph, seed):
        split = make_low_label_split(demo_graph, seed, val_size=30, test_size=30)
        split.validate(demo_graph)
        assert set(split.train.tolist()).isdisjoint(split.validation.tolist())
        assert set(split.train.tolist()).isdisjoint(split.test.tolist())
        assert set(split.validation.tolist()).isdisjoint(split.test.tolist())
        counts = np.bincount(demo_graph.labels[split.train], minlength=3)
        assert (counts == 20).all()


class TestHighLabelSplit:
    def test_ten_node_ratio(self):
        g = line_graph(10)
        split = make_high_label_split(g, seed=0)
        assert (split.train.size, split.validation.size, split.test.size) == (6, 2, 2)

    def test_cora_sizes(self, cora_graph):
        split = make_high_label_split(cora_graph, seed=0)
        assert (split.train.size, split.validation.size, split.test.size) == (1624, 541, 543)

    def test_seeds_differ_sizes_match(self, cora_graph):
        a = make_high_label_split(cora_graph, seed=0)
        b = make_high_label_split(cora_graph, seed=1)
        assert a.train.size == b.train.size
        assert not np.array_equal(a.train, b.train)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(5, 200))
    def test_partition_property(self, seed, n):
        g = line_graph(n)
        split = make_high_label_split(g, seed)
        split.validate(g)
        combined = np.concatenate([split.train, split.validation, split.test])
        assert np.array_equal(np.sort(combined), np.arange(n))
        assert split.train.size == (6 * n) // 10
        assert split.validation.size == (2 * n) // 10


def bfs_two_hops(graph, center):
    hop1 = set(int(v) for v in graph.neighbors(center))
    hop2 = set()
    for v in hop1:
        hop2.update(int(w) for w in graph.neighbors(v))
    hop2 -= hop1 | {center}
    return hop1, hop2


class TestSampleEgo:
    def test_star_graph(self):
        g = build_graph(["c", "l1", "l2", "l3"], [0] * 4, ["x"], [(0, 1), (0, 2), (0, 3)])
        ego = sample_ego(g, 0, per_call_cap=5, seed=0)
        assert sorted(ego.hop1) == [1, 2, 3]
        assert ego.hop2 == ()

    def test_path_two_hops(self):
        g = build_graph(["a", "b", "c"], [0] * 3, ["x"], [(0, 1), (1, 2)])
        ego = sample_ego(g, 0, per_call_cap=5, seed=0)
        assert ego.hop1 == (1,) and ego.hop2 == (2,)

    def test_isolated_center(self):
        g = build_graph(["a", "b"], [0, 0], ["x"], [])
        ego = sample_ego(g, 0, per_call_cap=5, seed=0)
        assert ego.hop1 == () and ego.hop2 == ()

    def test_cap_binds_and_is_deterministic(self):
        edges = [(0, i) for i in range(1, 21)]
        g = build_graph([f"d{i}" for i in range(21)], [0] * 21, ["x"], edges)
        ego1 = sample_ego(g, 0, per_call_cap=5, seed=9)
        ego2 = sample_ego(g, 0, per_call_cap=5, seed=9)
        assert len(ego1.hop1) == 5
        assert ego1.hop1 == ego2.hop1 and ego1.hop2 == ego2.hop2

    @settings(max_examples=40, deadline=None)
    @given(center=st.integers(0, 119), seed=st.integers(0, 2**31 - 1))
    def test_within_true_two_hop_ball(self, demo_graph, center, seed):
        ego = sample_ego(demo_graph, center, per_call_cap=5, seed=seed)
        hop1, hop2 = bfs_two_hops(demo_graph, center)
        assert set(ego.hop1) <= hop1
        # sampled hop-2 must be 2-hop reachable and outside hop1/center
        assert set(ego.hop2) <= (hop1 | hop2) - set(ego.hop1) - {center}
        assert set(ego.hop2) <= hop1 | hop2
        assert center not in set(ego.hop1) | set(ego.hop2)
        assert len(ego.hop1) <= 5 and len(ego.hop2) <= 5

    def test_hop2_excludes_all_hop1(self, demo_graph):
        for seed in range(5):
            ego = sample_ego(demo_graph, 7, per_call_cap=5, seed=seed)
            assert not (set(ego.hop1) & set(ego.hop2))


class TestCorpusShapes:
    def test_demo_shape(self, demo_graph):
        assert demo_graph.node_count == 120
        assert demo_graph.num_classes == 3
        demo_graph.validate()

    def test_corpus_deterministic(self):
        a = make_corpus(small_demo(seed=4))
        b = make_corpus(small_demo(seed=4))
        assert a.texts == b.texts
        assert np.array_equal(a.indices, b.indices)

    def test_corpus_seed_changes_content(self):
        a = make_corpus(small_demo(seed=4))
        b = make_corpus(small_demo(seed=5))
        assert a.texts != b.texts
