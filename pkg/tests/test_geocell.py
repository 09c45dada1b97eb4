from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from conftest import admin, samples_at, split_fixture, two_blob_fixture
from geocell_kit.clustering import OpticsParams
from geocell_kit.errors import ConfigError, EmptySet, InvariantViolation, UnresolvedSample
from geocell_kit.geo import GeoPoint, bbox_center, point_in_polygon, project_array
from geocell_kit.geocell import (
    AdminUnit,
    BuilderConfig,
    Geocell,
    GeocellSet,
    assign_cell,
    assign_cells,
    build_naive_geocells,
    build_semantic_geocells,
    check_partition,
    merge_admin_cells,
    resolve_admin2,
    split_cell_optics_voronoi,
    voronoi_carve,
)
from geocell_kit.synthetic import lattice, make_world, rect
from oracles import nearest_site

KM_PER_DEG = 111.195


def unit_box(iso="AAA", box=(44.5, 4.4, 45.5, 5.6)) -> AdminUnit:
    return admin(iso, "1", "1", box)


def row_of_units(counts, iso="AAA", admin1s=None):
    """Adjacent 1x1 degree admin2 units along a row, with ``counts`` samples each."""
    admins, pts = [], []
    admin1s = admin1s or ["1"] * len(counts)
    rng = np.random.default_rng(0)
    for k, (n, a1) in enumerate(zip(counts, admin1s)):
        admins.append(admin(iso, a1, f"{k}", (0.0, float(k), 1.0, float(k + 1))))
        pts += [(rng.uniform(0.1, 0.9), rng.uniform(k + 0.1, k + 0.9)) for _ in range(n)]
    return samples_at(pts), admins


def city(seed):
    rng = np.random.default_rng(seed)
    pts = []
    for c in [(45.0, 5.0), (45.18, 5.0), (44.82, 5.0), (45.0, 5.25), (45.0, 4.75)]:
        pts += lattice(rng, 150, c[0], c[1], 0.3)
    while len(pts) < 1000:
        pts.append((rng.uniform(44.55, 45.45), rng.uniform(4.45, 5.55)))
    return samples_at(pts, "c")


def ring(seed, n_ring=150, r_km=20.0):
    rng = np.random.default_rng(seed)
    pts = lattice(rng, 150, 45.0, 5.0, 0.3)
    for k in range(n_ring):
        t = 2 * math.pi * k / n_ring + rng.normal() * 0.01
        rr = r_km + rng.normal() * 0.5
        pts.append((45 + rr * math.sin(t) / KM_PER_DEG,
                    5 + rr * math.cos(t) / (KM_PER_DEG * math.cos(math.radians(45)))))
    return samples_at(pts, "r")


class TestNaive:
    def test_four_corners(self):
        s = samples_at([(10, 10), (10, -10), (-10, 10), (-10, -10)])
        cells = build_naive_geocells(s, BuilderConfig(min_cell_size=1, max_cell_size=1))
        assert len(cells) == 4
        assert sorted(c.sample_count for c in cells) == [1, 1, 1, 1]
        check_partition(cells, [x.id for x in s])

    def test_identical_samples_stay_together(self):
        s = samples_at([(3.0, 3.0)] * 10)
        cells = build_naive_geocells(s, BuilderConfig(min_cell_size=1, max_cell_size=2))
        assert len(cells) == 1 and cells.cells[0].sample_count == 10

    def test_uniform_respects_max(self):
        rng = np.random.default_rng(5)
        s = samples_at(rng.uniform(-20, 20, (100, 2)))
        cells = build_naive_geocells(s, BuilderConfig(min_cell_size=1, max_cell_size=30))
        assert all(c.sample_count <= 30 for c in cells)
        check_partition(cells, [x.id for x in s])
        assert all(c.provenance == "naive" for c in cells)

    def test_max_below_min_rejected(self):
        s = samples_at([(0, 0), (1, 1)])
        with pytest.raises(ConfigError):
            build_naive_geocells(s, BuilderConfig(min_cell_size=10, max_cell_size=5))

    def test_empty_input(self):
        with pytest.raises(EmptySet):
            build_naive_geocells([], BuilderConfig())

    def test_cells_cover_their_members(self):
        rng = np.random.default_rng(6)
        s = samples_at(rng.uniform(-5, 5, (80, 2)))
        cells = build_naive_geocells(s, BuilderConfig(min_cell_size=5, max_cell_size=20))
        by_id = {x.id: x for x in s}
        for c in cells:
            assert all(point_in_polygon(by_id[m].location, c.geometry) for m in c.members)


class TestMerge:
    def test_small_units_absorb_until_minimum(self):
        s, admins = row_of_units([10, 20, 500])
        cells = merge_admin_cells(s, admins, BuilderConfig(min_cell_size=30))
        assert sorted(c.sample_count for c in cells) == [30, 500]
        assert not any(c.remainder for c in cells)

    def test_large_units_unchanged(self):
        s, admins = row_of_units([40, 50, 60])
        cells = merge_admin_cells(s, admins, BuilderConfig(min_cell_size=30))
        assert [c.sample_count for c in cells] == [40, 50, 60]
        assert [c.provenance for c in cells] == [f"merge:AAA.1.{k}" for k in range(3)]

    def test_never_crosses_countries(self):
        s1, a1 = row_of_units([5], iso="AAA")
        s2 = samples_at([(0.5, 1.5)] * 5, "t")
        a2 = [admin("BBB", "1", "0", (0.0, 1.0, 1.0, 2.0))]
        cells = merge_admin_cells(s1 + s2, a1 + a2, BuilderConfig(min_cell_size=30))
        assert len(cells) == 2
        assert all(c.remainder for c in cells)
        assert sorted(c.country for c in cells) == ["AAA", "BBB"]

    def test_prefers_same_admin1(self):
        # unit 0 borders unit 1 (same region) and a smaller unit in another region
        s, admins = row_of_units([5, 40, 60])
        extra = admin("AAA", "2", "9", (-1.0, 0.0, 0.0, 1.0))
        s += samples_at([(-0.5, 0.5)] * 35, "u")
        cells = merge_admin_cells(s, admins + [extra], BuilderConfig(min_cell_size=30))
        prov = {c.provenance for c in cells}
        assert prov == {"merge:AAA.1.0+AAA.1.1", "merge:AAA.1.2", "merge:AAA.2.9"}

    def test_empty_units_dropped(self):
        s, admins = row_of_units([40, 0, 40])
        cells = merge_admin_cells(s, admins, BuilderConfig(min_cell_size=30))
        assert [c.sample_count for c in cells] == [40, 40]

    def test_unresolved_sample(self):
        s, admins = row_of_units([3])
        with pytest.raises(UnresolvedSample):
            resolve_admin2(s + samples_at([(50.0, 50.0)], "z"), admins)

    def test_merged_geometry_is_union(self):
        s, admins = row_of_units([10, 25])
        cells = merge_admin_cells(s, admins, BuilderConfig(min_cell_size=30))
        (c,) = cells.cells
        assert c.geometry.bounds == pytest.approx((0.0, 0.0, 1.0, 2.0))
        assert c.centroid.lat == pytest.approx(0.5, abs=1e-3)
        assert c.centroid.lon == pytest.approx(1.0, abs=1e-3)


class TestSplit:
    @pytest.mark.parametrize("seed", range(3))
    def test_dense_cluster_carved(self, seed, backend):
        s, box = split_fixture(seed)
        cells = build_semantic_geocells(s, [AdminUnit("admin2", "AAA", "AAA.1", "AAA.1.1", box)],
                                       BuilderConfig(min_cell_size=20))
        assert sorted(c.sample_count for c in cells) == [50, 50]
        core = {x.id for x in s[:50]}
        carved = [c for c in cells if "|split:" in c.provenance]
        assert len(carved) == 1 and set(carved[0].members) == core

    def test_two_blobs(self):
        s, box = two_blob_fixture(1)
        cells = build_semantic_geocells(s, [AdminUnit("admin2", "AAA", "AAA.1", "AAA.1.1", box)],
                                       BuilderConfig(min_cell_size=30))
        groups = sorted(sorted(c.members) for c in cells)
        assert groups == [sorted(x.id for x in s[:100]), sorted(x.id for x in s[100:])]

    def test_small_cell_not_split(self):
        s, box = split_fixture(0)
        cell = Geocell(0, box, bbox_center(box), tuple(x.id for x in s), "AAA", "merge:x")
        assert split_cell_optics_voronoi(cell, s, BuilderConfig(min_cell_size=50)) == [cell]

    def test_voronoi_regions_match_nearest_site(self):
        s, box = split_fixture(2)
        sites = np.unique(np.array([x.location.as_tuple() for x in s]), axis=0)
        core = {x.location.as_tuple() for x in s[:50]}
        take = np.array([tuple(p) in core for p in sites])
        carved, rest = voronoi_carve(box, sites, take)
        origin = bbox_center(box)
        xy = project_array(sites, origin)
        rng = np.random.default_rng(3)
        checked = 0
        for lat, lon in zip(rng.uniform(44.5, 45.5, 2000), rng.uniform(4.4, 5.6, 2000)):
            q = project_array(np.array([[lat, lon]]), origin)[0]
            d = np.hypot(xy[:, 0] - q[0], xy[:, 1] - q[1])
            k, best = nearest_site(q, xy)
            if np.partition(d, 1)[1] - best < 1e-3:
                continue
            p = GeoPoint(lat, lon)
            assert point_in_polygon(p, carved) == bool(take[k])
            assert point_in_polygon(p, rest) != bool(take[k]) or point_in_polygon(p, carved)
            checked += 1
        assert checked > 1900

    def test_projection_guard_skips_split(self, caplog):
        rng = np.random.default_rng(4)
        pts = lattice(rng, 60, 30.0, 10.0, 0.3) + lattice(rng, 60, 40.0, 30.0, 0.3)
        s = samples_at(pts)
        box = rect(20.0, 0.0, 50.0, 40.0)
        cell = Geocell(0, box, bbox_center(box), tuple(x.id for x in s), "AAA", "merge:x")
        with caplog.at_level(logging.WARNING, logger="geocell_kit"):
            out = split_cell_optics_voronoi(cell, s, BuilderConfig(min_cell_size=20))
        assert out == [cell]
        assert "skipping split" in caplog.text

    def test_several_rounds(self):
        s, box = two_blob_fixture(2)
        cfg = BuilderConfig(min_cell_size=30,
                            optics_rounds=(OpticsParams(3, 0.15), OpticsParams(10, 0.1)))
        cells = build_semantic_geocells(s, [AdminUnit("admin2", "AAA", "AAA.1", "AAA.1.1", box)], cfg)
        check_partition(cells, [x.id for x in s])
        assert all(c.sample_count >= 30 for c in cells)


class TestSemanticExamples:
    @pytest.mark.parametrize("seed", range(2))
    def test_city_neighborhoods(self, seed):
        s = city(seed)
        cfg = BuilderConfig(min_cell_size=100)
        assert len(merge_admin_cells(s, [unit_box()], cfg)) == 1
        cells = build_semantic_geocells(s, [unit_box()], cfg)
        assert len(cells) >= 5
        assert all(c.sample_count > 100 for c in cells)

    @pytest.mark.parametrize("seed", range(2))
    def test_core_separated_from_ring(self, seed):
        s = ring(seed)
        cells = build_semantic_geocells(s, [unit_box()], BuilderConfig(min_cell_size=50))
        core = {x.id for x in s[:150]}
        assert any(set(c.members) == core for c in cells)


class TestAssign:
    @pytest.fixture
    def two_cells(self):
        a, b = rect(0, 0, 1, 1), rect(0, 1, 1, 2)
        return GeocellSet((
            Geocell(0, a, GeoPoint(0.5, 0.5), ("a",), "AAA", "t"),
            Geocell(1, b, GeoPoint(0.5, 1.5), ("b",), "AAA", "t"),
        ))

    def test_inside(self, two_cells):
        assert assign_cell(GeoPoint(0.5, 1.7), two_cells) == (1, False)

    def test_shared_border_goes_to_lowest_id(self, two_cells):
        assert assign_cell(GeoPoint(0.5, 1.0), two_cells) == (0, False)

    def test_gap_falls_back_to_nearest_centroid(self, two_cells):
        assert assign_cell(GeoPoint(3.0, 1.9), two_cells) == (1, True)

    def test_vectorized(self, two_cells):
        ids, fb = assign_cells([0.5, 0.5, -4.0], [0.2, 1.2, 0.4], two_cells)
        assert ids.tolist() == [0, 1, 0] and fb.tolist() == [False, False, True]

    def test_empty_set(self):
        with pytest.raises(EmptySet):
            assign_cell(GeoPoint(0, 0), GeocellSet(()))


@pytest.fixture(scope="module")
def world():
    s, admins = make_world(600, seed=3, neighborhoods=[(40.7, 1.3)], neighborhood_size=50)
    return s, admins, build_semantic_geocells(s, admins, BuilderConfig(min_cell_size=20))


class TestInvariants:
    def test_partition(self, world):
        s, _, cells = world
        check_partition(cells, [x.id for x in s])

    def test_country_purity(self, world):
        s, admins, cells = world
        country = {x.id: x.country for x in resolve_admin2(s, admins)}
        for c in cells:
            assert {country[m] for m in c.members} == {c.country}

    def test_balance(self, world):
        _, _, cells = world
        assert all(c.sample_count >= 20 for c in cells if not c.remainder)

    def test_ids_are_dense(self, world):
        _, _, cells = world
        assert [c.cell_id for c in cells] == list(range(len(cells)))

    def test_deterministic_across_thread_counts(self, world, monkeypatch):
        s, admins, cells = world
        monkeypatch.setenv("GEOCELL_KIT_THREADS", "4")
        again = build_semantic_geocells(s, admins, BuilderConfig(min_cell_size=20))
        assert again == cells

    def test_check_partition_detects_duplicates(self):
        g = rect(0, 0, 1, 1)
        cells = GeocellSet((Geocell(0, g, GeoPoint(0.5, 0.5), ("a", "b"), "", "t"),
                            Geocell(1, g, GeoPoint(0.5, 0.5), ("b",), "", "t")))
        with pytest.raises(InvariantViolation):
            check_partition(cells, ["a", "b"])
        with pytest.raises(InvariantViolation):
            check_partition(GeocellSet(cells.cells[:1]), ["a", "b", "c"])

    def test_duplicate_ids_rejected(self):
        g = rect(0, 0, 1, 1)
        c = Geocell(0, g, GeoPoint(0.5, 0.5), ("a",), "", "t")
        with pytest.raises(InvariantViolation):
            GeocellSet((c, c))

    def test_config_round_trip(self):
        cfg = BuilderConfig(25, (OpticsParams(3, 0.15), OpticsParams(10, 0.1)), 100, "samples")
        assert BuilderConfig.from_dict(cfg.to_dict()) == cfg
