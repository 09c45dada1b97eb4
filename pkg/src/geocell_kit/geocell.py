"""Geocell construction: naive rectangles, admin merging and OPTICS/Voronoi splitting.

Semantic geocells start from admin2 polygons, merge under-populated ones
with neighbors inside the same country (same admin1 first), then carve
oversized cells along density clusters of their training samples using a
Voronoi tessellation over the sample locations.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely
from shapely import geometry as sg

from . import shapes
from .clustering import OpticsParams, optics_order
from .errors import (
    ConfigError,
    DegenerateGeometry,
    EmptySet,
    InvariantViolation,
    ProjectionDomain,
    UnresolvedSample,
)
from .geo import (
    EARTH,
    PROJECTION_GUARD_DEG,
    GeoPoint,
    MultiPolygon,
    Polygon,
    bbox_center,
    centroid,
    haversine_array,
    mean_location,
    points_in_polygon,
    project_array,
)

log = logging.getLogger(__name__)

ADJACENCY_BUFFER_DEG = 1e-6
# padding (degrees) around the sample bounding box for naive cells
NAIVE_PAD_DEG = 1e-3

AUX_FIELDS = (
    "climate", "month", "bearing", "drive_side", "elevation", "population_density",
    "temp_avg", "temp_range", "precip_avg", "precip_range", "region", "country_name",
)


@dataclass(frozen=True)
class Sample:
    id: str
    location: GeoPoint
    country: str = ""
    admin1: str = ""
    admin2: str = ""
    climate: str | None = None
    month: int | None = None
    bearing: float | None = None
    drive_side: str | None = None
    elevation: float | None = None
    population_density: float | None = None
    temp_avg: float | None = None
    temp_range: float | None = None
    precip_avg: float | None = None
    precip_range: float | None = None
    region: str | None = None
    country_name: str | None = None


@dataclass(frozen=True)
class AdminUnit:
    level: str
    iso: str
    admin1_id: str
    admin2_id: str
    geometry: MultiPolygon
    admin1_name: str | None = None
    country_name: str | None = None

    @property
    def unit_id(self) -> str:
        return {"country": self.iso, "admin1": self.admin1_id}.get(self.level, self.admin2_id)


@dataclass(frozen=True)
class BuilderConfig:
    min_cell_size: int = 30
    optics_rounds: tuple[OpticsParams, ...] = (OpticsParams(3, 0.15),)
    max_cell_size: int = 200
    centroid_mode: str = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "optics_rounds", tuple(self.optics_rounds))
        if int(self.min_cell_size) != self.min_cell_size or self.min_cell_size < 1:
            raise ConfigError(f"min_cell_size must be an integer >= 1, got {self.min_cell_size}")
        if not self.optics_rounds:
            raise ConfigError("at least one OPTICS round is required")
        if self.centroid_mode not in ("polygon", "samples"):
            raise ConfigError(f"centroid_mode must be 'polygon' or 'samples', got {self.centroid_mode!r}")

    def to_dict(self) -> dict:
        return {
            "min_cell_size": int(self.min_cell_size),
            "optics_rounds": [p.to_dict() for p in self.optics_rounds],
            "max_cell_size": int(self.max_cell_size),
            "centroid_mode": self.centroid_mode,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BuilderConfig":
        kw = dict(d)
        if "optics_rounds" in kw:
            kw["optics_rounds"] = tuple(OpticsParams.from_dict(p) for p in kw["optics_rounds"])
        return cls(**kw)


@dataclass(frozen=True)
class Geocell:
    cell_id: int
    geometry: MultiPolygon
    centroid: GeoPoint
    members: tuple[str, ...]
    country: str
    provenance: str
    remainder: bool = False

    @property
    def sample_count(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GeocellSet:
    cells: tuple[Geocell, ...]
    config: BuilderConfig = field(default_factory=BuilderConfig)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("duplicate cell ids")

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def by_id(self, cell_id: int) -> Geocell:
        return self._index[cell_id]

    @property
    def _index(self) -> dict[int, Geocell]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {c.cell_id: c for c in self.cells}
            self.__dict__["_idx"] = idx
        return idx

    def position(self, cell_id: int) -> int:
        pos = self.__dict__.get("_pos")
        if pos is None:
            pos = {c.cell_id: i for i, c in enumerate(self.cells)}
            self.__dict__["_pos"] = pos
        return pos[cell_id]

    def assignment(self) -> dict[str, int]:
        return {m: c.cell_id for c in self.cells for m in c.members}

    def centroid_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lat = np.array([c.centroid.lat for c in self.cells], dtype=np.float64)
        lon = np.array([c.centroid.lon for c in self.cells], dtype=np.float64)
        return lat, lon


def worker_count() -> int:
    env = os.environ.get("GEOCELL_KIT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _parallel_map(fn, items: Sequence) -> list:
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _cell_centroid(geometry: MultiPolygon, members: Sequence[Sample], mode: str) -> GeoPoint:
    if mode == "samples" and members:
        return mean_location([s.location for s in members])
    return centroid(geometry)


def _coords(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    lat = np.array([s.location.lat for s in samples], dtype=np.float64)
    lon = np.array([s.location.lon for s in samples], dtype=np.float64)
    return lat, lon


def _renumber(cells: Iterable[Geocell]) -> list[Geocell]:
    return [replace(c, cell_id=i) for i, c in enumerate(cells)]


# -- naive -------------------------------------------------------------------


def _median_split(values: np.ndarray) -> tuple[int, float] | None:
    """Split position nearest the median between two distinct sorted values."""
    order = np.sort(values)
    n = len(order)
    gaps = np.flatnonzero(order[1:] > order[:-1]) + 1
    if gaps.size == 0:
        return None
    p = int(gaps[np.argmin(np.abs(gaps - n / 2.0))])
    return p, float((order[p - 1] + order[p]) / 2.0)


def build_naive_geocells(samples: Sequence[Sample], config: BuilderConfig) -> GeocellSet:
    """Recursive median splits of the sample bounding box.

    A rectangle holding more than ``max_cell_size`` samples is cut at the
    sample median along its longer side (in km); recursion stops when a cut
    would leave a child below ``min_cell_size``.
    """
    if not samples:
        raise EmptySet("no samples to partition")
    if config.max_cell_size < config.min_cell_size:
        raise ConfigError(
            f"max_cell_size {config.max_cell_size} < min_cell_size {config.min_cell_size}"
        )
    lat, lon = _coords(samples)
    idx_all = np.arange(len(samples))
    leaves: list[tuple[tuple[float, float, float, float], np.ndarray]] = []

    def recurse(rect, idx):
        lat0, lon0, lat1, lon1 = rect
        if len(idx) > config.max_cell_size:
            mid_lat = math.radians((lat0 + lat1) / 2.0)
            ns_km = math.radians(lat1 - lat0) * EARTH.radius_km
            ew_km = math.radians(lon1 - lon0) * EARTH.radius_km * math.cos(mid_lat)
            axes = (1, 0) if ew_km > ns_km else (0, 1)
            for axis in axes:
                vals = (lat if axis == 0 else lon)[idx]
                split = _median_split(vals)
                if split is None:
                    continue
                p, cut = split
                if min(p, len(idx) - p) < config.min_cell_size:
                    break
                low, high = idx[vals < cut], idx[vals >= cut]
                if axis == 0:
                    recurse((lat0, lon0, cut, lon1), low)
                    recurse((cut, lon0, lat1, lon1), high)
                else:
                    recurse((lat0, lon0, lat1, cut), low)
                    recurse((lat0, cut, lat1, lon1), high)
                return
        leaves.append((rect, idx))

    pad = NAIVE_PAD_DEG
    root = (max(-90.0, lat.min() - pad), lon.min() - pad, min(90.0, lat.max() + pad), lon.max() + pad)
    recurse(root, idx_all)

    cells = []
    for i, ((lat0, lon0, lat1, lon1), idx) in enumerate(leaves):
        geom = MultiPolygon((Polygon([(lat0, lon0), (lat0, lon1), (lat1, lon1), (lat1, lon0)]),))
        members = [samples[j] for j in idx]
        countries = {s.country for s in members}
        cells.append(Geocell(
            cell_id=i,
            geometry=geom,
            centroid=_cell_centroid(geom, members, config.centroid_mode),
            members=tuple(s.id for s in members),
            country=countries.pop() if len(countries) == 1 else "",
            provenance="naive",
            remainder=len(members) < config.min_cell_size,
        ))
    return GeocellSet(tuple(cells), config)


# -- admin merging -----------------------------------------------------------


def resolve_admin2(samples: Sequence[Sample], admins: Sequence[AdminUnit]) -> list[Sample]:
    """Attach (country, admin1, admin2) lineage by point-in-polygon.

    Points on a shared border go to the unit with the lowest admin2 id.

    Raises:
        UnresolvedSample: some sample lies in no admin2 polygon.
    """
    units = sorted((a for a in admins if a.level == "admin2"), key=lambda a: a.admin2_id)
    lat, lon = _coords(samples)
    owner = np.full(len(samples), -1, dtype=np.int64)
    for k, unit in enumerate(units):
        free = np.flatnonzero(owner < 0)
        if free.size == 0:
            break
        hit = points_in_polygon(lat[free], lon[free], unit.geometry)
        owner[free[hit]] = k
    missing = [samples[i].id for i in np.flatnonzero(owner < 0)]
    if missing:
        raise UnresolvedSample(f"{len(missing)} sample(s) match no admin2 unit: {missing[:5]}")
    out = []
    for s, k in zip(samples, owner):
        u = units[k]
        out.append(replace(
            s, country=u.iso, admin1=u.admin1_id, admin2=u.admin2_id,
            region=s.region if s.region is not None else u.admin1_name,
            country_name=s.country_name if s.country_name is not None else u.country_name,
        ))
    return out


def admin_adjacency(units: Sequence[AdminUnit]) -> list[set[int]]:
    """Neighbor sets from buffered intersection of unit geometries."""
    geoms = [shapes.to_shapely(u.geometry) for u in units]
    tree = shapely.STRtree(geoms)
    buffered = [g.buffer(ADJACENCY_BUFFER_DEG) for g in geoms]
    left, right = tree.query(buffered, predicate="intersects")
    nbrs: list[set[int]] = [set() for _ in units]
    for a, b in zip(left.tolist(), right.tolist()):
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    return nbrs


@dataclass
class _Group:
    key: int
    units: list[int]
    iso: str
    admin1s: set[str]
    members: list[int]


def merge_admin_cells(samples: Sequence[Sample], admins: Sequence[AdminUnit],
                      config: BuilderConfig, resolved: bool = False) -> GeocellSet:
    """Merge adjacent admin2 units until every cell reaches ``min_cell_size``.

    Under-populated cells are processed smallest first and merged into the
    least populated legal neighbor, preferring the same admin1. Merges never
    cross ISO country codes; cells that cannot reach the minimum are kept and
    flagged as remainders. Units that end up with no samples are dropped.
    """
    if not resolved:
        samples = resolve_admin2(samples, admins)
    units = sorted((a for a in admins if a.level == "admin2"), key=lambda a: a.admin2_id)
    unit_pos = {u.admin2_id: k for k, u in enumerate(units)}
    nbrs = admin_adjacency(units)

    groups = {
        k: _Group(k, [k], u.iso, {u.admin1_id}, []) for k, u in enumerate(units)
    }
    for i, s in enumerate(samples):
        groups[unit_pos[s.admin2]].members.append(i)
    owner = list(range(len(units)))  # unit -> group key
    gnbrs = {k: set(n) for k, n in enumerate(nbrs)}
    minsize = config.min_cell_size

    def legal(g: _Group) -> list[_Group]:
        return [groups[k] for k in sorted(gnbrs[g.key]) if groups[k].iso == g.iso]

    while True:
        candidates = sorted(
            (g for g in groups.values() if len(g.members) < minsize and legal(g)),
            key=lambda g: (len(g.members), g.key),
        )
        if not candidates:
            break
        g = candidates[0]
        options = legal(g)
        same_admin1 = [o for o in options if o.admin1s & g.admin1s]
        target = min(same_admin1 or options, key=lambda o: (len(o.members), o.key))
        keep, drop = (g, target) if g.key < target.key else (target, g)
        keep.units.extend(drop.units)
        keep.admin1s |= drop.admin1s
        keep.members.extend(drop.members)
        for u in drop.units:
            owner[u] = keep.key
        merged_nbrs = (gnbrs[keep.key] | gnbrs[drop.key]) - {keep.key, drop.key}
        for k in gnbrs.pop(drop.key):
            if k in gnbrs:
                gnbrs[k].discard(drop.key)
                if k != keep.key:
                    gnbrs[k].add(keep.key)
        gnbrs[keep.key] = merged_nbrs
        del groups[drop.key]

    def make(g: _Group) -> Geocell | None:
        if not g.members:
            return None
        unit_ids = sorted(units[u].admin2_id for u in g.units)
        if len(g.units) == 1:
            geom = units[g.units[0]].geometry
        else:
            geom = shapes.from_shapely(shapes.union(units[u].geometry for u in sorted(g.units)))
        members = sorted(g.members)
        member_samples = [samples[i] for i in members]
        return Geocell(
            cell_id=g.key,
            geometry=geom,
            centroid=_cell_centroid(geom, member_samples, config.centroid_mode),
            members=tuple(samples[i].id for i in members),
            country=g.iso,
            provenance="merge:" + "+".join(unit_ids),
            remainder=len(members) < minsize,
        )

    ordered = sorted(groups.values(), key=lambda g: (g.iso, g.key))
    cells = [c for c in _parallel_map(make, ordered) if c is not None]
    return GeocellSet(tuple(_renumber(cells)), config)


# -- OPTICS + Voronoi splitting ----------------------------------------------


def voronoi_carve(geometry: MultiPolygon, sites: np.ndarray, take: np.ndarray):
    """Split ``geometry`` into the union of Voronoi regions of ``sites[take]``
    and the rest, computed in the local projection about the bbox center.

    ``sites`` is an (n, 2) lat/lon array of distinct points.

    Returns:
        (carved, residual) as MultiPolygons.

    Raises:
        ProjectionDomain: the cell extends more than 10 degrees from its center.
        DegenerateGeometry: either side of the split is empty.
    """
    origin = bbox_center(geometry)
    min_lat, min_lon, max_lat, max_lon = geometry.bounds
    project_array(np.array([[min_lat, min_lon], [max_lat, max_lon]]), origin)
    xy = project_array(sites, origin)
    cell_km = shapes.project_shape(shapes.to_shapely(geometry), origin)
    cell_km = cell_km if cell_km.is_valid else shapely.make_valid(cell_km)
    x0, y0, x1, y1 = cell_km.bounds
    span = max(x1 - x0, y1 - y0, 1.0)
    frame = sg.box(x0 - span, y0 - span, x1 + span, y1 + span)
    regions = shapely.voronoi_polygons(sg.MultiPoint(xy), extend_to=frame, ordered=True)
    regions = list(regions.geoms)
    if len(regions) != len(xy):
        raise DegenerateGeometry("Voronoi diagram did not return one region per site")
    chosen = shapely.union_all([regions[i] for i in np.flatnonzero(take)])
    carved_km = cell_km.intersection(chosen)
    rest_km = cell_km.difference(carved_km)
    carved = shapes.clean(shapes.unproject_shape(carved_km, origin))
    rest = shapes.clean(shapes.unproject_shape(rest_km, origin))
    return shapes.from_shapely(carved), shapes.from_shapely(rest)


def _largest_cluster(result) -> np.ndarray | None:
    if not result.clusters:
        return None
    sizes = [(e - s + 1, -s, k) for k, (s, e) in enumerate(result.clusters)]
    _, _, k = max(sizes)
    return np.asarray(result.members(k), dtype=np.int64)


def split_cell_optics_voronoi(cell: Geocell, samples: Sequence[Sample] | Mapping[str, Sample],
                              config: BuilderConfig) -> list[Geocell]:
    """Carve density clusters out of an oversized cell.

    For each OPTICS round, every current cell is clustered repeatedly; while
    the largest cluster and the remaining samples both exceed
    ``min_cell_size``, the cluster's Voronoi regions (over all the cell's
    sample locations, clipped to the cell) become a new cell. Returned cells
    carry temporary ids; the residual parent comes first.
    """
    by_id = samples if isinstance(samples, Mapping) else {s.id: s for s in samples}
    minsize = config.min_cell_size
    if cell.sample_count <= 2 * minsize:
        return [cell]
    work = [cell]
    for round_no, params in enumerate(config.optics_rounds, start=1):
        nxt: list[Geocell] = []
        for g in work:
            nxt.extend(_carve_round(g, by_id, params, round_no, config))
        work = nxt
    return work


def _carve_round(cell: Geocell, by_id: Mapping[str, Sample], params: OpticsParams,
                 round_no: int, config: BuilderConfig) -> list[Geocell]:
    minsize = config.min_cell_size
    carved: list[Geocell] = []
    current = cell
    step = 0
    while current.sample_count > 2 * minsize:
        members = [by_id[m] for m in current.members]
        latlon = np.array([(s.location.lat, s.location.lon) for s in members])
        result = optics_order(latlon, params, metric="haversine")
        cluster = _largest_cluster(result)
        if cluster is None:
            break
        sites, inverse = np.unique(latlon, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        site_taken = np.zeros(len(sites), dtype=bool)
        site_taken[inverse[cluster]] = True
        taken = site_taken[inverse]
        k = int(taken.sum())
        n = len(members)
        if not (k > minsize and n - k > minsize):
            break
        try:
            geom_new, geom_rest = voronoi_carve(current.geometry, sites, site_taken)
        except (DegenerateGeometry, ProjectionDomain) as exc:
            log.warning("skipping split of %s: %s", current.provenance, exc)
            break
        step += 1
        new_members = [s for s, t in zip(members, taken) if t]
        rest_members = [s for s, t in zip(members, taken) if not t]
        carved.append(Geocell(
            cell_id=-1,
            geometry=geom_new,
            centroid=_cell_centroid(geom_new, new_members, config.centroid_mode),
            members=tuple(s.id for s in new_members),
            country=cell.country,
            provenance=f"{cell.provenance}|split:r{round_no}.{step}",
        ))
        current = replace(
            current,
            geometry=geom_rest,
            centroid=_cell_centroid(geom_rest, rest_members, config.centroid_mode),
            members=tuple(s.id for s in rest_members),
        )
    return [current] + carved


def build_semantic_geocells(samples: Sequence[Sample], admins: Sequence[AdminUnit],
                            config: BuilderConfig) -> GeocellSet:
    """Admin merging followed by OPTICS/Voronoi splitting of oversized cells."""
    resolved = resolve_admin2(samples, admins)
    merged = merge_admin_cells(resolved, admins, config, resolved=True)
    by_id = {s.id: s for s in resolved}

    def split(cell: Geocell) -> list[Geocell]:
        return split_cell_optics_voronoi(cell, by_id, config)

    pieces = _parallel_map(split, list(merged.cells))
    cells = _renumber(c for group in pieces for c in group)
    out = GeocellSet(tuple(cells), config)
    check_partition(out, [s.id for s in resolved])
    return out


# -- assignment & invariants -------------------------------------------------


def assign_cells(lat, lon, cells: GeocellSet) -> tuple[np.ndarray, np.ndarray]:
    """Containing cell per point (lowest cell_id on shared borders).

    Points in no cell fall back to the cell with the nearest centroid
    (haversine) and are flagged.
    """
    if len(cells) == 0:
        raise EmptySet("no geocells")
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    out = np.full(lat.shape[0], -1, dtype=np.int64)
    for cell in sorted(cells, key=lambda c: c.cell_id):
        free = np.flatnonzero(out < 0)
        if free.size == 0:
            break
        hit = points_in_polygon(lat[free], lon[free], cell.geometry)
        out[free[hit]] = cell.cell_id
    fallback = out < 0
    if fallback.any():
        clat, clon = cells.centroid_arrays()
        ids = np.array([c.cell_id for c in cells.cells])
        for i in np.flatnonzero(fallback):
            d = haversine_array(lat[i], lon[i], clat, clon)
            best = np.flatnonzero(d == d.min())
            out[i] = int(ids[best].min())
    return out, fallback


def assign_cell(point: GeoPoint, cells: GeocellSet) -> tuple[int, bool]:
    ids, fb = assign_cells([point.lat], [point.lon], cells)
    return int(ids[0]), bool(fb[0])


def check_partition(cells: GeocellSet, sample_ids: Sequence[str]) -> None:
    """Raise InvariantViolation unless every sample is in exactly one cell."""
    seen: dict[str, int] = {}
    for c in cells:
        for m in c.members:
            if m in seen:
                raise InvariantViolation(f"sample {m} in cells {seen[m]} and {c.cell_id}")
            seen[m] = c.cell_id
    if len(seen) != len(sample_ids) or set(seen) != set(sample_ids):
        raise InvariantViolation("cell members do not cover the dataset exactly")


def projected_extent_ok(geometry: MultiPolygon) -> bool:
    min_lat, min_lon, max_lat, max_lon = geometry.bounds
    return max(max_lat - min_lat, max_lon - min_lon) / 2.0 <= PROJECTION_GUARD_DEG
