from __future__ import annotations

import math

import numpy as np
import pytest

from geocell_kit.clustering import OpticsParams
from geocell_kit.errors import (
    ConfigError,
    DimensionMismatch,
    EmptyCell,
    FormatError,
    MissingEmbedding,
    UnknownCell,
)
from geocell_kit.geo import GeoPoint
from geocell_kit.geocell import Geocell, GeocellSet
from geocell_kit.refine import (
    PIGEON_REFINE,
    PIGEOTTO_REFINE,
    PredictionRecord,
    RefineParams,
    build_cluster_index,
    distance_softmax,
    load_index,
    refine_topk,
    refine_within_cluster,
    save_index,
    select_cluster_in_cell,
)
from geocell_kit.synthetic import lattice, rect
from conftest import samples_at
from oracles import brute_nearest

NO_LIMIT = dict(max_refine_distance_km=None)


def index_of(groups, embeddings, params=None, centroids=None):
    """One cell per entry of ``groups`` (a list of point lists)."""
    samples, cells = [], []
    for cid, pts in enumerate(groups):
        ss = samples_at(pts, f"c{cid}_")
        samples += ss
        c = centroids[cid] if centroids else GeoPoint(*pts[0])
        cells.append(Geocell(cid, rect(-1, -1, 1, 1), c, tuple(s.id for s in ss), "", "t"))
    emb = np.asarray(embeddings, dtype=np.float32)
    return build_cluster_index(GeocellSet(tuple(cells)), samples,
                               ([s.id for s in samples], emb), params), samples


def record(query, topk):
    return PredictionRecord(np.asarray(query, dtype=np.float64), tuple(topk))


class TestBuildIndex:
    def test_single_sample_cell(self):
        idx, _ = index_of([[(0.0, 0.0)]], [[1.5, -2.0]], OpticsParams(3, 0.15))
        (cl,) = idx.clusters
        assert cl.singleton and cl.member_ids == ("c0_0000",)
        np.testing.assert_array_equal(cl.mean_embedding, [1.5, -2.0])

    def test_two_blobs_give_two_clusters(self):
        rng = np.random.default_rng(3)
        pts = lattice(rng, 10, 45.0, 5.0, 0.3) + lattice(rng, 10, 45.0, 6.27, 0.3)
        emb = rng.normal(size=(20, 8)).astype(np.float32)
        idx, _ = index_of([pts], emb, OpticsParams(3, 0.15))
        real = [c for c in idx.clusters if not c.singleton]
        assert len(real) == 2 and not any(c.singleton for c in idx.clusters)
        means = sorted((tuple(c.member_rows), c.mean_embedding) for c in real)
        np.testing.assert_allclose(means[0][1], emb[:10].astype(np.float64).mean(0), atol=1e-6)
        np.testing.assert_allclose(means[1][1], emb[10:].astype(np.float64).mean(0), atol=1e-6)

    def test_all_noise_becomes_singletons(self):
        # fewer points than min_samples: no point is a core point
        pts = [(0.0, 0.0), (0.0, 0.01), (0.01, 0.0), (0.01, 0.01)]
        idx, _ = index_of([pts], np.eye(4), OpticsParams(5, 0.15))
        assert idx.cluster_count == 4 and all(c.singleton for c in idx.clusters)

    def test_every_sample_in_one_cluster(self):
        rng = np.random.default_rng(4)
        groups = [lattice(rng, 30, 10.0 * g, 0.0, 0.5) + [(10.0 * g + 1, 1.0)] for g in range(3)]
        idx, samples = index_of(groups, rng.normal(size=(93, 4)), OpticsParams(3, 0.15))
        members = sorted(m for c in idx.clusters for m in c.member_ids)
        assert members == sorted(s.id for s in samples)
        for c in idx.clusters:
            assert {m.split("_")[0] for m in c.member_ids} == {f"c{c.cell_id}"}

    def test_missing_embedding(self):
        samples = samples_at([(0, 0), (0, 1)])
        cells = GeocellSet((Geocell(0, rect(-1, -1, 1, 2), GeoPoint(0, 0),
                                    tuple(s.id for s in samples), "", "t"),))
        with pytest.raises(MissingEmbedding):
            build_cluster_index(cells, samples, (["s0000"], np.zeros((1, 3))))

    def test_immutable(self):
        idx, _ = index_of([[(0.0, 0.0)]], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            idx.sample_embeddings[0, 0] = 5.0


class TestSelectCluster:
    @pytest.fixture
    def two(self):
        return index_of([[(0, 0), (0, 0.1)]], [[0.0, 0.0], [4.0, 2.0]])[0]

    def test_query_at_mean(self, two):
        assert select_cluster_in_cell([4.0, 2.0], 0, two) == (1, 0.0)

    def test_interpolated_query(self, two):
        m1, m2 = np.array([0.0, 0.0]), np.array([4.0, 2.0])
        cid, d = select_cluster_in_cell(m1 + 0.4 * (m2 - m1), 0, two)
        assert cid == 0
        assert d == pytest.approx(0.4 * math.hypot(4, 2), abs=1e-12)

    def test_tie_goes_to_lower_id(self, two):
        assert select_cluster_in_cell([2.0, 1.0], 0, two)[0] == 0

    def test_unknown_cell(self, two):
        with pytest.raises(UnknownCell):
            select_cluster_in_cell([0.0, 0.0], 9, two)

    def test_dimension_mismatch(self, two):
        with pytest.raises(DimensionMismatch):
            select_cluster_in_cell([0.0, 0.0, 0.0], 0, two)


class TestRefineWithinCluster:
    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(6)
        pts = lattice(rng, 10, 45.0, 5.0, 0.3)
        emb = rng.normal(size=(10, 6)).astype(np.float32)
        idx, samples = index_of([pts], emb, OpticsParams(3, 0.15))
        (cl,) = [c for c in idx.clusters if len(c.member_ids) == 10]
        for _ in range(20):
            q = rng.normal(size=6)
            sid, loc = refine_within_cluster(q, cl.cluster_id, idx)
            k, _ = brute_nearest(q, emb.astype(np.float64).tolist())
            assert sid == samples[k].id
            assert loc == samples[k].location

    def test_member_embedding_returns_member(self):
        idx, samples = index_of([[(0, 0), (0, 0.01), (0, 0.02)]], np.eye(3), OpticsParams(2, 0.1))
        (cl,) = idx.clusters
        assert refine_within_cluster([0, 1, 0], cl.cluster_id, idx)[0] == samples[1].id


class TestRefineTopK:
    @pytest.fixture
    def pair(self):
        # cell 0 mean at (1, 0), cell 1 mean at (-1, 0)
        return index_of([[(0.0, 0.0)], [(0.0, 0.5)]], [[1.0, 0.0], [-1.0, 0.0]])[0]

    def test_single_candidate(self, pair):
        for t in (0.01, 1.0, 100.0):
            out = refine_topk(record([-0.9, 0.1], [(0, 0.6), (1, 0.4)]), pair,
                              RefineParams(top_k=1, softmax_temperature=t, **NO_LIMIT))
            assert out.cluster_id == 0 and out.sample_id == "c0_0000"

    def test_equal_distances_follow_probability(self, pair):
        out = refine_topk(record([0.0, 0.0], [(0, 0.7), (1, 0.3)]), pair,
                          RefineParams(2, 1.6, None))
        assert out.sample_id == "c0_0000"
        assert out.score == pytest.approx(0.35, abs=1e-12)

    def test_distance_beats_probability(self):
        idx, _ = index_of([[(0.0, 0.0)], [(0.0, 0.5)]], [[0.0, 0.0], [10.0, 0.0]])
        out = refine_topk(record([0.0, 0.0], [(0, 0.4), (1, 0.6)]), idx, RefineParams(2, 0.6, None))
        assert out.sample_id == "c0_0000"
        assert out.score == pytest.approx(0.4 / (1 + math.exp(-10 / 0.6)), abs=1e-12)

    def test_exact_tie_goes_to_lower_cell(self, pair):
        a = refine_topk(record([0.0, 0.0], [(1, 0.5), (0, 0.5)]), pair, RefineParams(2, 1.0, None))
        assert a.cluster_id == 0

    def test_output_is_a_training_location(self):
        rng = np.random.default_rng(8)
        groups = [lattice(rng, 15, float(g), 0.0, 0.5) for g in range(4)]
        idx, samples = index_of(groups, rng.normal(size=(60, 5)), OpticsParams(3, 0.15))
        locs = {s.location for s in samples}
        for _ in range(20):
            p = rng.dirichlet(np.ones(4))
            out = refine_topk(record(rng.normal(size=5), enumerate(p)), idx, PIGEOTTO_REFINE)
            assert out.location in locs

    def test_distance_filter_drops_far_candidates(self):
        idx, _ = index_of([[(0.0, 0.0)], [(30.0, 0.0)]], [[5.0, 0.0], [0.0, 0.0]])
        rec = record([0.0, 0.0], [(0, 0.6), (1, 0.4)])
        assert refine_topk(rec, idx, RefineParams(2, 1.0, None)).sample_id == "c1_0000"
        out = refine_topk(rec, idx, RefineParams(2, 1.0, 1000.0))
        assert out.sample_id == "c0_0000" and not out.fallback

    def test_fallback_when_everything_is_filtered(self):
        idx, _ = index_of([[(0.0, 0.0)], [(0.0, 1.0)]], [[1.0], [2.0]],
                          centroids=[GeoPoint(40.0, 0.0), GeoPoint(40.0, 1.0)])
        out = refine_topk(record([2.0], [(0, 0.6), (1, 0.4)]), idx, RefineParams(2, 1.0, 10.0))
        assert out.fallback and out.sample_id == "c0_0000"

    def test_per_sample_variant(self):
        # the cluster mean favors cell 1 while a single member of cell 0 is closer
        pts0 = [(0.0, 0.0), (0.0, 0.001), (0.0, 0.002)]
        idx, _ = index_of([pts0, [(0.0, 0.5)]], [[0.0], [10.0], [10.0], [4.0]], OpticsParams(2, 0.1))
        rec = record([0.5], [(0, 0.5), (1, 0.5)])
        assert refine_topk(rec, idx, RefineParams(2, 1.0, None)).sample_id == "c1_0000"
        out = refine_topk(rec, idx, RefineParams(2, 1.0, None, per_sample=True))
        assert out.sample_id == "c0_0000"

    def test_unknown_cell(self, pair):
        with pytest.raises(UnknownCell):
            refine_topk(record([0.0, 0.0], [(7, 1.0)]), pair)

    def test_empty_topk(self, pair):
        with pytest.raises(EmptyCell):
            refine_topk(record([0.0, 0.0], []), pair)

    def test_negative_probability(self, pair):
        with pytest.raises(ConfigError):
            refine_topk(record([0.0, 0.0], [(0, -0.1)]), pair)

    @pytest.mark.parametrize("kw", [dict(top_k=0), dict(softmax_temperature=0.0),
                                    dict(max_refine_distance_km=-5.0)])
    def test_bad_params(self, kw):
        with pytest.raises(ConfigError):
            RefineParams(**kw)

    def test_presets(self):
        assert (PIGEON_REFINE.top_k, PIGEON_REFINE.softmax_temperature,
                PIGEON_REFINE.max_refine_distance_km) == (5, 1.6, 1000.0)
        assert (PIGEOTTO_REFINE.top_k, PIGEOTTO_REFINE.softmax_temperature,
                PIGEOTTO_REFINE.max_refine_distance_km) == (40, 0.6, None)


class TestProperties:
    def test_singletons_equal_exhaustive_nearest_neighbor(self, backend):
        rng = np.random.default_rng(21)
        groups = [[(float(c), 0.01 * j) for j in range(10)] for c in range(50)]
        emb = rng.normal(size=(500, 12)).astype(np.float32)
        idx, samples = index_of(groups, emb)
        rows = emb.astype(np.float64).tolist()
        params = RefineParams(50, 1.0, None)
        for _ in range(100):
            q = rng.normal(size=12)
            out = refine_topk(record(q, [(c, 0.02) for c in range(50)]), idx, params)
            k, _ = brute_nearest(q, rows)
            assert out.sample_id == samples[k].id

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            d = rng.uniform(0, 20, int(rng.integers(1, 40)))
            c = rng.uniform(-50, 50)
            t = rng.uniform(0.1, 5)
            np.testing.assert_allclose(distance_softmax(d + c, t), distance_softmax(d, t),
                                       rtol=0, atol=1e-12)

    def test_softmax_orientation(self):
        r = distance_softmax([0.0, 1.0], 1.0)
        assert r[0] > r[1]
        assert r[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)

    def test_fused_score_monotone_in_distance(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            d = rng.uniform(0, 10, 5)
            p = rng.dirichlet(np.ones(5))
            k = int(rng.integers(5))
            before = (distance_softmax(d, 1.3) * p)[k]
            d[k] -= rng.uniform(0, 3)
            assert (distance_softmax(d, 1.3) * p)[k] >= before

    def test_deterministic(self):
        rng = np.random.default_rng(24)
        groups = [lattice(rng, 12, float(g), 0.0, 0.5) for g in range(3)]
        idx, _ = index_of(groups, np.round(rng.normal(size=(36, 4)), 1), OpticsParams(3, 0.15))
        rec = record(np.zeros(4), [(0, 0.3), (1, 0.3), (2, 0.4)])
        assert refine_topk(rec, idx, PIGEON_REFINE) == refine_topk(rec, idx, PIGEON_REFINE)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(30)
        groups = [lattice(rng, 20, float(g), 0.0, 0.5) + [(g + 0.5, 2.0)] for g in range(3)]
        idx, _ = index_of(groups, rng.normal(size=(63, 6)), OpticsParams(3, 0.15))
        save_index(idx, tmp_path / "index")
        back = load_index(tmp_path / "index")
        assert back.dim == idx.dim and back.sample_ids == idx.sample_ids
        assert back.params == idx.params
        for a, b in zip(idx.clusters, back.clusters):
            assert a.member_ids == b.member_ids and a.singleton == b.singleton
            np.testing.assert_array_equal(a.mean_embedding, b.mean_embedding)
        for _ in range(20):
            rec = record(rng.normal(size=6), enumerate(rng.dirichlet(np.ones(3))))
            assert refine_topk(rec, idx) == refine_topk(rec, back)

    def test_wrong_format(self, tmp_path):
        idx, _ = index_of([[(0.0, 0.0)]], [[1.0]])
        save_index(idx, tmp_path)
        (tmp_path / "manifest.json").write_text('{"format": "other"}')
        with pytest.raises(FormatError):
            load_index(tmp_path)
