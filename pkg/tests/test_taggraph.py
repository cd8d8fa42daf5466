import io
import math

import numpy as np
import pytest

from tagsmith import (
    Content,
    DuplicateVertex,
    GraphConfig,
    InvalidEdge,
    InvalidInput,
    Provenance,
    ScriptedEncoder,
    SnapshotError,
    Tag,
    TagGraph,
    UnknownVertex,
    cosine,
)
from .helpers import RandomGraphFixture
from .oracles import (
    oracle_c2c2t,
    oracle_c2t,
    oracle_cosine,
    oracle_edges,
    oracle_match_recall,
    oracle_union,
)


def angle_vec(c: float) -> list[float]:
    """2-d unit-ish vector whose cosine to (1, 0) is approximately c."""
    return [c, math.sqrt(max(0.0, 1.0 - c * c))]


def scripted_graph(tag_cos: dict[str, float], config: GraphConfig | None = None):
    """Graph over one content at (1,0) and tags at chosen cosines to it."""
    table = {"content zero": [1.0, 0.0]}
    tags = []
    for name, c in tag_cos.items():
        table[f"tag {name}"] = angle_vec(c)
        tags.append(Tag(name, f"tag {name}"))
    enc = ScriptedEncoder(table, dim=2)
    graph = TagGraph(enc, config or GraphConfig(delta_ct=0.5, delta_cc=0.8))
    for t in tags:
        graph.add_tag(t)
    graph.add_content(Content("c0", title="content zero"))
    return graph


class TestAddTag:
    def test_empty_graph_one_vertex_no_edges(self):
        enc = ScriptedEncoder({"tag a": [1.0, 0.0]}, dim=2)
        graph = TagGraph(enc)
        graph.add_tag(Tag("a", "tag a"))
        assert graph.tag_ids() == ["a"]
        assert graph.edge_count() == 0

    def test_threshold_met_creates_edge(self):
        graph = scripted_graph({"close": 0.6})
        assert [e[:3] for e in graph.similarity_edges()] == [("CT", "c0", "close")]

    def test_just_under_threshold_no_edge(self):
        graph = scripted_graph({"near": 0.4999})
        assert graph.similarity_edges() == []

    def test_threshold_is_inclusive(self):
        # cosine((1,0),(3,4)...) — use exact rational cosine 24/25 = 0.96
        enc = ScriptedEncoder({"content zero": [3.0, 4.0], "tag x": [4.0, 3.0]}, dim=2)
        graph = TagGraph(enc, GraphConfig(delta_ct=0.96, delta_cc=0.8))
        graph.add_content(Content("c0", title="content zero"))
        graph.add_tag(Tag("x", "tag x"))
        (edge,) = graph.similarity_edges()
        assert edge[3] == 0.96

    def test_duplicate_tag_rejected(self):
        enc = ScriptedEncoder({"tag a": [1.0, 0.0]}, dim=2)
        graph = TagGraph(enc)
        graph.add_tag(Tag("a", "tag a"))
        with pytest.raises(DuplicateVertex):
            graph.add_tag(Tag("a", "tag a"))


class TestAddContent:
    def test_content_content_edge(self):
        enc = ScriptedEncoder(
            {"content one": [1.0, 0.0], "content two": angle_vec(0.85)}, dim=2
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.5, delta_cc=0.8))
        graph.add_content(Content("c1", title="content one"))
        graph.add_content(Content("c2", title="content two"))
        (edge,) = graph.similarity_edges()
        assert edge[0] == "CC"
        assert edge[3] == pytest.approx(0.85, abs=1e-12)

    def test_tag_only_graph_gets_ct_edges_only(self):
        graph = scripted_graph({"a": 0.9, "b": 0.2})
        kinds = {e[0] for e in graph.similarity_edges()}
        assert kinds == {"CT"}

    def test_duplicate_content_rejected(self):
        enc = ScriptedEncoder({"content one": [1.0, 0.0]}, dim=2)
        graph = TagGraph(enc)
        graph.add_content(Content("c1", title="content one"))
        with pytest.raises(DuplicateVertex):
            graph.add_content(Content("c1", title="content one"))

    def test_edges_match_bruteforce_on_random_graph(self):
        fixture = RandomGraphFixture(
            np.random.default_rng(7), n_contents=25, n_tags=25
        )
        graph = fixture.build()
        ct, cc = oracle_edges(
            fixture.content_vecs,
            fixture.tag_vecs,
            fixture.config.delta_ct,
            fixture.config.delta_cc,
        )
        got_ct = {(a, b): w for kind, a, b, w in graph.similarity_edges() if kind == "CT"}
        got_cc = {(a, b): w for kind, a, b, w in graph.similarity_edges() if kind == "CC"}
        assert set(got_ct) == set(ct)
        assert set(got_cc) == set(cc)
        for pair, w in got_ct.items():
            assert w == pytest.approx(ct[pair], abs=1e-9)
        for pair, w in got_cc.items():
            assert w == pytest.approx(cc[pair], abs=1e-9)


class TestDeterministicEdges:
    def _graph(self):
        enc = ScriptedEncoder(
            {"content one": [1.0, 0.0], "content two": [0.0, 1.0], "tag a": [0.7, 0.7]},
            dim=2,
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.99, delta_cc=0.99))
        graph.add_content(Content("c1", title="content one"))
        graph.add_content(Content("c2", title="content two"))
        graph.add_tag(Tag("a", "tag a"))
        return graph

    def test_idempotent(self):
        graph = self._graph()
        graph.add_deterministic("c1", "a")
        before = graph.edge_count()
        graph.add_deterministic("c1", "a")
        assert graph.edge_count() == before

    def test_content_content_is_invalid(self):
        graph = self._graph()
        with pytest.raises(InvalidEdge):
            graph.add_deterministic("c1", "c2")

    def test_tag_in_content_slot_is_invalid(self):
        graph = self._graph()
        with pytest.raises(InvalidEdge):
            graph.add_deterministic("a", "a")

    def test_unknown_tag(self):
        graph = self._graph()
        with pytest.raises(UnknownVertex):
            graph.add_deterministic("c1", "zzz")

    def test_unknown_content(self):
        graph = self._graph()
        with pytest.raises(UnknownVertex):
            graph.add_deterministic("zzz", "a")


class TestRecallC2T:
    def test_under_cap_ordered(self):
        graph = scripted_graph({"hi": 0.9, "mid": 0.7, "lo": 0.6})
        got = graph.recall_c2t("c0")
        assert [t for t, _ in got] == ["hi", "mid", "lo"]
        assert [w for _, w in got] == pytest.approx([0.9, 0.7, 0.6], abs=1e-12)

    def test_cap_truncates_to_top(self):
        tag_cos = {f"t{i:02d}": 0.5 + 0.02 * i for i in range(20)}
        graph = scripted_graph(tag_cos, GraphConfig(delta_ct=0.5, delta_cc=0.8, cap_c2t=15))
        got = graph.recall_c2t("c0")
        assert len(got) == 15
        expected = sorted(tag_cos, key=lambda t: -tag_cos[t])[:15]
        assert [t for t, _ in got] == expected

    def test_unknown_content(self):
        graph = scripted_graph({"a": 0.9})
        with pytest.raises(UnknownVertex):
            graph.recall_c2t("missing")

    def test_deterministic_edges_not_traversed(self):
        # the direct route walks similarity edges only
        graph = scripted_graph({"far": 0.1})
        graph.add_deterministic("c0", "far")
        assert graph.recall_c2t("c0") == []


class TestRecallC2C2T:
    def _two_hop_graph(self):
        enc = ScriptedEncoder(
            {
                "content a": [1.0, 0.0],
                "content b": angle_vec(0.9),
                "content c": angle_vec(0.82),
                "tag one": [0.0, 1.0],
            },
            dim=2,
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.99, delta_cc=0.8))
        graph.add_tag(Tag("t1", "tag one"))
        graph.add_content(Content("cb", title="content b"))
        graph.add_content(Content("cc", title="content c"))
        graph.add_content(Content("ca", title="content a"))
        return graph

    def test_single_path(self):
        graph = self._two_hop_graph()
        graph.add_deterministic("cb", "t1")
        got = graph.recall_c2c2t("ca")
        assert [t for t, _ in got] == ["t1"]
        assert got[0][1] == pytest.approx(0.9, abs=1e-12)

    def test_max_dedup_across_paths(self):
        graph = self._two_hop_graph()
        graph.add_deterministic("cb", "t1")  # path weight ~0.9
        graph.add_deterministic("cc", "t1")  # path weight ~0.82
        got = graph.recall_c2c2t("ca")
        assert len(got) == 1
        assert got[0][1] == pytest.approx(0.9, abs=1e-12)

    def test_unknown_content(self):
        graph = self._two_hop_graph()
        with pytest.raises(UnknownVertex):
            graph.recall_c2c2t("missing")


class TestRecallUnion:
    def test_merge_both_takes_max_score(self):
        enc = ScriptedEncoder(
            {
                "content a": [1.0, 0.0],
                "content b": angle_vec(0.9),
                "tag one": angle_vec(0.7),
            },
            dim=2,
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.5, delta_cc=0.8))
        graph.add_tag(Tag("t1", "tag one"))
        graph.add_content(Content("cb", title="content b"))
        graph.add_deterministic("cb", "t1")
        graph.add_content(Content("ca", title="content a"))
        (entry,) = graph.recall("ca").entries
        assert entry.tag == "t1"
        assert entry.provenance is Provenance.BOTH
        assert entry.score == pytest.approx(0.9, abs=1e-12)

    def test_disjoint_union_sizes(self):
        enc = ScriptedEncoder(
            {
                "content a": [1.0, 0.0, 0.0],
                "content b": [0.92, 0.0, 0.39191835884530846],
                "tag one": [0.9, 0.43588989435406733, 0.0],
                "tag two": [0.8, 0.5999999999999999, 0.0],
                "tag three": [0.7, 0.7141428428542849, 0.0],
                "tag four": [0.0, 1.0, 0.0],
                "tag five": [0.0, 0.0, 1.0],
            },
            dim=3,
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.5, delta_cc=0.8))
        for tid, name in [("t1", "tag one"), ("t2", "tag two"), ("t3", "tag three"),
                          ("t4", "tag four"), ("t5", "tag five")]:
            graph.add_tag(Tag(tid, name))
        graph.add_content(Content("cb", title="content b"))
        graph.add_deterministic("cb", "t4")
        graph.add_deterministic("cb", "t5")
        graph.add_content(Content("ca", title="content a"))
        entries = graph.recall("ca").entries
        assert len(entries) == 5
        by_prov = {e.tag: e.provenance for e in entries}
        assert by_prov["t4"] is Provenance.C2C2T
        assert by_prov["t5"] is Provenance.C2C2T
        assert by_prov["t1"] is Provenance.C2T


class TestCommitTags:
    def _graph(self):
        enc = ScriptedEncoder(
            {
                "content a": [1.0, 0.0],
                "content b": angle_vec(0.85),
                "tag one": [0.0, 1.0],
                "tag two": [0.0, -1.0],
            },
            dim=2,
        )
        graph = TagGraph(enc, GraphConfig(delta_ct=0.99, delta_cc=0.8))
        graph.add_tag(Tag("t1", "tag one"))
        graph.add_tag(Tag("t2", "tag two"))
        graph.add_content(Content("ca", title="content a"))
        graph.add_content(Content("cb", title="content b"))
        return graph

    def test_feedback_reachable_via_c2c2t(self):
        graph = self._graph()
        graph.commit_tags("ca", ["t1"])
        got = graph.recall_c2c2t("cb")
        assert [t for t, _ in got] == ["t1"]
        assert got[0][1] == pytest.approx(0.85, abs=1e-12)

    def test_atomic_on_unknown_tag(self):
        graph = self._graph()
        before = graph.edge_count()
        with pytest.raises(UnknownVertex):
            graph.commit_tags("ca", ["t1", "missing"])
        assert graph.edge_count() == before

    def test_idempotent(self):
        graph = self._graph()
        graph.commit_tags("ca", ["t1", "t2"])
        count = graph.edge_count()
        graph.commit_tags("ca", ["t1", "t2"])
        assert graph.edge_count() == count

    def test_survives_snapshot_roundtrip(self):
        graph = self._graph()
        graph.commit_tags("ca", ["t1"])
        text = graph.snapshot_text()
        loaded = TagGraph.load_snapshot(io.StringIO(text), graph.encoder, graph.config)
        assert loaded.deterministic_edges() == [("ca", "t1")]
        assert loaded.snapshot_text() == text


class TestRandomizedRecallOracle:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_recall_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        fixture = RandomGraphFixture(rng, n_contents=50, n_tags=50)
        graph = fixture.build()
        ct, cc = oracle_edges(
            fixture.content_vecs,
            fixture.tag_vecs,
            fixture.config.delta_ct,
            fixture.config.delta_cc,
        )
        for content in fixture.contents:
            cid = content.id
            want_c2t = oracle_c2t(cid, ct, fixture.config.cap_c2t)
            got_c2t = graph.recall_c2t(cid)
            assert [t for t, _ in got_c2t] == [t for t, _ in want_c2t]
            for (_, gw), (_, ww) in zip(got_c2t, want_c2t):
                assert gw == pytest.approx(ww, abs=1e-9)

            want_c2c2t = oracle_c2c2t(cid, cc, fixture.det_edges, fixture.config.cap_c2c2t)
            got_c2c2t = graph.recall_c2c2t(cid)
            assert [t for t, _ in got_c2c2t] == [t for t, _ in want_c2c2t]

            want_union = oracle_union(want_c2t, want_c2c2t)
            got_union = graph.recall(cid)
            assert [e.tag for e in got_union.entries] == [t for t, _, _ in want_union]
            assert [e.provenance.value for e in got_union.entries] == [
                p for _, _, p in want_union
            ]

    def test_match_recall_matches_bruteforce(self):
        fixture = RandomGraphFixture(np.random.default_rng(11), n_contents=10, n_tags=60)
        graph = fixture.build()
        for content in fixture.contents[:5]:
            want = oracle_match_recall(fixture.content_vecs[content.id], fixture.tag_vecs, 20)
            got = graph.match_recall(content.id, 20)
            assert [t for t, _ in got] == [t for t, _ in want]


class TestGraphInvariants:
    def test_edge_kind_constraints_hold(self):
        fixture = RandomGraphFixture(np.random.default_rng(3), n_contents=20, n_tags=20)
        graph = fixture.build()
        contents, tags = set(graph.content_ids()), set(graph.tag_ids())
        for kind, a, b, _ in graph.similarity_edges():
            if kind == "CT":
                assert a in contents and b in tags
            else:
                assert a in contents and b in contents
        for c, t in graph.deterministic_edges():
            assert c in contents and t in tags

    def test_similarity_weights_equal_cosine_and_meet_threshold(self):
        fixture = RandomGraphFixture(np.random.default_rng(5), n_contents=20, n_tags=20)
        graph = fixture.build()
        for kind, a, b, w in graph.similarity_edges():
            if kind == "CT":
                actual = oracle_cosine(fixture.content_vecs[a], fixture.tag_vecs[b])
                assert w >= fixture.config.delta_ct
            else:
                actual = oracle_cosine(fixture.content_vecs[a], fixture.content_vecs[b])
                assert w >= fixture.config.delta_cc
            assert abs(w - actual) <= 1e-9

    def test_insertion_order_independence(self):
        fixture = RandomGraphFixture(np.random.default_rng(9), n_contents=15, n_tags=15)
        snapshots = {fixture.build(order_seed=s).snapshot_text() for s in (None, 1, 2, 3)}
        assert len(snapshots) == 1

    def test_graph_config_validation(self):
        with pytest.raises(InvalidInput):
            GraphConfig(delta_ct=1.5)
        with pytest.raises(InvalidInput):
            GraphConfig(delta_cc=-1.0)
        with pytest.raises(InvalidInput):
            GraphConfig(cap_c2t=0)


class TestRemoveContent:
    def test_remove_restores_prior_state(self):
        fixture = RandomGraphFixture(np.random.default_rng(13), n_contents=10, n_tags=10)
        graph = fixture.build()
        before = graph.snapshot_text()
        extra_vec = [1.0 / math.sqrt(8)] * 8
        fixture.encoder.add("intruder content", extra_vec)
        graph.add_content(Content("intruder", title="intruder content"))
        graph.commit_tags("intruder", [fixture.tags[0].id])
        graph.remove_content("intruder")
        assert graph.snapshot_text() == before

    def test_remove_unknown(self):
        fixture = RandomGraphFixture(np.random.default_rng(13), n_contents=2, n_tags=2)
        graph = fixture.build()
        with pytest.raises(UnknownVertex):
            graph.remove_content("nope")


class TestSnapshot:
    def _graph(self):
        fixture = RandomGraphFixture(np.random.default_rng(21), n_contents=12, n_tags=12)
        return fixture.build(), fixture

    def test_save_load_save_identical(self):
        graph, fixture = self._graph()
        text = graph.snapshot_text()
        loaded = TagGraph.load_snapshot(io.StringIO(text), fixture.encoder, fixture.config)
        assert loaded.snapshot_text() == text

    def test_recall_equal_after_roundtrip(self):
        graph, fixture = self._graph()
        loaded = TagGraph.load_snapshot(
            io.StringIO(graph.snapshot_text()), fixture.encoder, fixture.config
        )
        for content in fixture.contents:
            a = [(e.tag, e.provenance) for e in graph.recall(content.id).entries]
            b = [(e.tag, e.provenance) for e in loaded.recall(content.id).entries]
            assert a == b

    @pytest.mark.parametrize(
        "mutate, message",
        [
            (lambda L: L.__setitem__(0, "{broken"), "invalid JSON"),
            (
                lambda L: L.__setitem__(
                    0, '{"kind":"CONTENT","id":"zz","embedding":[0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0]}'
                ),
                "bad embedding",
            ),
            (lambda L: L.insert(0, L[0]), "duplicate"),
            (
                lambda L: L.append('{"kind":"DETERMINISTIC","a":"c0000","b":"t0000","weight":0.5}'),
                "carry no weight",
            ),
            (
                lambda L: L.append('{"kind":"SIMILARITY_CT","a":"c0000","b":"zzz","weight":0.9}'),
                "unknown tag",
            ),
            (
                lambda L: L.append('{"kind":"SIMILARITY_CC","a":"c0000","b":"c0000","weight":0.9}'),
                "self-loop",
            ),
            (lambda L: L.append('{"kind":"WHAT","a":"x","b":"y"}'), "unknown record kind"),
        ],
    )
    def test_corrupted_snapshots_rejected(self, mutate, message):
        graph, fixture = self._graph()
        lines = graph.snapshot_text().splitlines()
        mutate(lines)
        text = "".join(line + "\n" for line in lines)
        with pytest.raises(SnapshotError, match=message):
            TagGraph.load_snapshot(io.StringIO(text), fixture.encoder, fixture.config)

    def test_tampered_weight_rejected(self):
        graph, fixture = self._graph()
        lines = graph.snapshot_text().splitlines()
        for i, line in enumerate(lines):
            if '"SIMILARITY_CT"' in line or '"SIMILARITY_CC"' in line:
                import json

                obj = json.loads(line)
                obj["weight"] = min(1.0, obj["weight"] + 1e-6)
                lines[i] = json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
                break
        else:
            pytest.skip("fixture produced no similarity edges")
        text = "".join(line + "\n" for line in lines)
        with pytest.raises(SnapshotError, match="differs from"):
            TagGraph.load_snapshot(io.StringIO(text), fixture.encoder, fixture.config)

    def test_below_threshold_weight_rejected(self):
        graph, fixture = self._graph()
        text = graph.snapshot_text()
        # tighten thresholds so existing edges fall below them on load
        strict = GraphConfig(delta_ct=0.99, delta_cc=0.99)
        if not graph.similarity_edges():
            pytest.skip("fixture produced no similarity edges")
        with pytest.raises(SnapshotError, match="below threshold"):
            TagGraph.load_snapshot(io.StringIO(text), fixture.encoder, strict)

    def test_edge_before_vertex_rejected(self):
        graph, fixture = self._graph()
        lines = graph.snapshot_text().splitlines()
        edge_lines = [l for l in lines if '"SIMILARITY' in l or '"DETERMINISTIC"' in l]
        if not edge_lines:
            pytest.skip("fixture produced no edges")
        reordered = edge_lines[:1] + [l for l in lines if l != edge_lines[0]]
        text = "".join(line + "\n" for line in reordered)
        with pytest.raises(SnapshotError, match="unknown"):
            TagGraph.load_snapshot(io.StringIO(text), fixture.encoder, fixture.config)

    def test_dim_mismatch_with_encoder_rejected(self):
        graph, fixture = self._graph()
        other = ScriptedEncoder({"x": [1.0, 0.0]}, dim=2)
        with pytest.raises(SnapshotError, match="encoder dim"):
            TagGraph.load_snapshot(io.StringIO(graph.snapshot_text()), other, fixture.config)
