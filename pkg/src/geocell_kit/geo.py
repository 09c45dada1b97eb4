"""Spherical distance, polygon containment, centroids and local projection.

Polygons are stored as open rings (the first vertex is not repeated) with
counter-clockwise exteriors and clockwise holes, in (lat, lon) degrees.
Planar work happens in a local equirectangular projection, which is affine in
(lat, lon) for a fixed origin, so polygon shapes survive the round trip
exactly up to floating error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, InvalidGeoPoint, ProjectionDomain

DEFAULT_RADIUS_KM = 6371.0
PROJECTION_GUARD_DEG = 10.0
# tolerance (degrees) for "on the boundary" in containment tests
BOUNDARY_EPS = 1e-9


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into (-180, 180]; in-range values pass through exactly."""
    if -180.0 < lon <= 180.0:
        return float(lon)
    out = math.fmod(lon + 180.0, 360.0)
    if out < 0:
        out += 360.0
    out -= 180.0
    return 180.0 if out == -180.0 else out


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if math.isnan(lat) or math.isnan(lon) or math.isinf(lat) or math.isinf(lon):
            raise InvalidGeoPoint(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidGeoPoint(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))

    def as_tuple(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class EarthModel:
    radius_km: float = DEFAULT_RADIUS_KM

    def __post_init__(self):
        if not (self.radius_km > 0 and math.isfinite(self.radius_km)):
            raise ValueError(f"radius_km must be positive, got {self.radius_km}")


EARTH = EarthModel()


def haversine(p1: GeoPoint, p2: GeoPoint, earth: EarthModel = EARTH) -> float:
    """Great-circle distance in kilometers."""
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    s_lat = math.sin((phi2 - phi1) / 2.0)
    s_lon = math.sin(math.radians(p2.lon - p1.lon) / 2.0)
    a = s_lat * s_lat + math.cos(phi1) * math.cos(phi2) * s_lon * s_lon
    a = min(1.0, max(0.0, a))
    return 2.0 * earth.radius_km * math.asin(math.sqrt(a))


def haversine_array(lat1, lon1, lat2, lon2, earth: EarthModel = EARTH) -> np.ndarray:
    """Vectorized haversine over broadcast-compatible degree arrays."""
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2))
    )
    return kernels.haversine_pairs(lat1, lon1, lat2, lon2, earth.radius_km)


def haversine_matrix(lat1, lon1, lat2, lon2, earth: EarthModel = EARTH) -> np.ndarray:
    return kernels.haversine_matrix(
        np.ravel(lat1), np.ravel(lon1), np.ravel(lat2), np.ravel(lon2), earth.radius_km
    )


def points_to_array(points: Iterable[GeoPoint]) -> np.ndarray:
    """(n, 2) array of (lat, lon)."""
    arr = np.array([(p.lat, p.lon) for p in points], dtype=np.float64)
    return arr.reshape(-1, 2)


# -- polygons ----------------------------------------------------------------


def _signed_area(lat: np.ndarray, lon: np.ndarray) -> float:
    # shoelace with x = lon, y = lat; positive for counter-clockwise
    return 0.5 * float(np.dot(lon, np.roll(lat, -1)) - np.dot(np.roll(lon, -1), lat))


def _canonical_ring(ring: Sequence, ccw: bool) -> np.ndarray:
    arr = np.array(
        [(p.lat, p.lon) if isinstance(p, GeoPoint) else (float(p[0]), float(p[1])) for p in ring],
        dtype=np.float64,
    ).reshape(-1, 2)
    if len(arr) > 1 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    # drop consecutive duplicates
    if len(arr) > 1:
        keep = np.any(arr != np.roll(arr, 1, axis=0), axis=1)
        arr = arr[keep] if keep.any() else arr[:1]
    if len(np.unique(arr, axis=0)) < 3:
        raise DegenerateGeometry("ring needs at least 3 distinct vertices")
    area = _signed_area(arr[:, 0], arr[:, 1])
    if (area > 0) != ccw and area != 0:
        arr = arr[::-1]
    return np.ascontiguousarray(arr)


@dataclass(frozen=True, eq=False)
class Polygon:
    """A polygon with one exterior ring and optional holes.

    Rings may be given as GeoPoints or (lat, lon) pairs, closed or open; they
    are stored open with normalized orientation.
    """

    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exterior", _canonical_ring(self.exterior, ccw=True))
        object.__setattr__(self, "holes", tuple(_canonical_ring(h, ccw=False) for h in self.holes))

    @classmethod
    def from_lonlat(cls, exterior, holes=()) -> "Polygon":
        """Build from GeoJSON-ordered (lon, lat) rings."""
        flip = lambda ring: [(float(c[1]), float(c[0])) for c in ring]  # noqa: E731
        return cls(flip(exterior), tuple(flip(h) for h in holes))

    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.exterior,) + self.holes

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon)."""
        lo = self.exterior.min(axis=0)
        hi = self.exterior.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def __eq__(self, other):
        if not isinstance(other, Polygon) or len(self.holes) != len(other.holes):
            return NotImplemented if not isinstance(other, Polygon) else False
        return all(np.array_equal(a, b) for a, b in zip(self.rings(), other.rings()))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MultiPolygon:
    parts: tuple[Polygon, ...] = field(default_factory=tuple)

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise DegenerateGeometry("MultiPolygon needs at least one part")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def of(cls, geom: "Polygon | MultiPolygon") -> "MultiPolygon":
        return geom if isinstance(geom, MultiPolygon) else cls((geom,))

    @cached_property
    def bounds(self) -> tuple[float, float, float, float]:
        b = np.array([p.bounds for p in self.parts])
        return (float(b[:, 0].min()), float(b[:, 1].min()), float(b[:, 2].max()), float(b[:, 3].max()))

    def __eq__(self, other):
        if not isinstance(other, MultiPolygon):
            return NotImplemented
        return len(self.parts) == len(other.parts) and all(
            a == b for a, b in zip(self.parts, other.parts)
        )

    __hash__ = None


def points_in_polygon(lat, lon, poly: "Polygon | MultiPolygon") -> np.ndarray:
    """Boundary-inclusive containment for arrays of points.

    A point is inside when it lies in some part's exterior and in none of that
    part's holes; points on any ring count as inside.
    """
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    result = np.zeros(lat.shape[0], dtype=bool)
    for part in MultiPolygon.of(poly).parts:
        min_lat, min_lon, max_lat, max_lon = part.bounds
        cand = np.flatnonzero(
            ~result
            & (lat >= min_lat - BOUNDARY_EPS)
            & (lat <= max_lat + BOUNDARY_EPS)
            & (lon >= min_lon - BOUNDARY_EPS)
            & (lon <= max_lon + BOUNDARY_EPS)
        )
        if cand.size == 0:
            continue
        x, y = lon[cand], lat[cand]
        ext = kernels.points_in_ring(x, y, part.exterior[:, 1], part.exterior[:, 0], BOUNDARY_EPS)
        ok = ext > 0
        for hole in part.holes:
            h = kernels.points_in_ring(x, y, hole[:, 1], hole[:, 0], BOUNDARY_EPS)
            # strictly inside a hole means outside; the hole ring itself is boundary
            ok &= h != 1
        result[cand[ok]] = True
    return result


def point_in_polygon(p: GeoPoint, poly: "Polygon | MultiPolygon") -> bool:
    return bool(points_in_polygon([p.lat], [p.lon], poly)[0])


# -- projection --------------------------------------------------------------


def _check_guard(lat: np.ndarray, lon: np.ndarray, origin: GeoPoint, guard_deg: float) -> None:
    dlon = np.abs((lon - origin.lon + 180.0) % 360.0 - 180.0)
    if lat.size and (np.max(np.abs(lat - origin.lat)) > guard_deg or np.max(dlon) > guard_deg):
        raise ProjectionDomain(f"points farther than {guard_deg} degrees from origin {origin}")


def project_array(latlon: np.ndarray, origin: GeoPoint, earth: EarthModel = EARTH,
                  guard_deg: float | None = PROJECTION_GUARD_DEG) -> np.ndarray:
    """Equirectangular projection of an (n, 2) lat/lon array to (east, north) km."""
    latlon = np.asarray(latlon, dtype=np.float64).reshape(-1, 2)
    lat, lon = latlon[:, 0], latlon[:, 1]
    if guard_deg is not None:
        _check_guard(lat, lon, origin, guard_deg)
    dlon = (lon - origin.lon + 180.0) % 360.0 - 180.0
    k = math.radians(1.0) * earth.radius_km
    east = k * math.cos(math.radians(origin.lat)) * dlon
    north = k * (lat - origin.lat)
    return np.column_stack([east, north])


def unproject_array(xy: np.ndarray, origin: GeoPoint, earth: EarthModel = EARTH) -> np.ndarray:
    """Inverse of ``project_array``; returns (n, 2) lat/lon with lon wrapped."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    k = math.radians(1.0) * earth.radius_km
    lat = origin.lat + xy[:, 1] / k
    lon = origin.lon + xy[:, 0] / (k * math.cos(math.radians(origin.lat)))
    lon = (lon + 180.0) % 360.0 - 180.0
    lon[lon == -180.0] = 180.0
    return np.column_stack([lat, lon])


def local_project(points: Sequence[GeoPoint], origin: GeoPoint,
                  earth: EarthModel = EARTH) -> list[tuple[float, float]]:
    """Project GeoPoints to (km east, km north) of ``origin``.

    Raises:
        ProjectionDomain: a point is more than 10 degrees from the origin in
            latitude or longitude.
    """
    xy = project_array(points_to_array(points), origin, earth)
    return [(float(x), float(y)) for x, y in xy]


def local_unproject(xy: Sequence[tuple[float, float]], origin: GeoPoint,
                    earth: EarthModel = EARTH) -> list[GeoPoint]:
    return [GeoPoint(a, b) for a, b in unproject_array(np.asarray(xy), origin, earth)]


def bbox_center(poly: "Polygon | MultiPolygon") -> GeoPoint:
    min_lat, min_lon, max_lat, max_lon = MultiPolygon.of(poly).bounds
    return GeoPoint((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0)


def _ring_moments(xy: np.ndarray) -> tuple[float, float, float]:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return area, float(((x + xn) * cross).sum() / 6.0), float(((y + yn) * cross).sum() / 6.0)


def centroid(poly: "Polygon | MultiPolygon", earth: EarthModel = EARTH) -> GeoPoint:
    """Area-weighted centroid in the local projection about the bbox center.

    Raises:
        DegenerateGeometry: total area is zero.
    """
    mp = MultiPolygon.of(poly)
    origin = bbox_center(mp)
    area = mx = my = 0.0
    for part in mp.parts:
        for ring in part.rings():
            # centroid is projection-invariant (the map is affine), so the
            # domain guard is not needed here
            a, sx, sy = _ring_moments(project_array(ring, origin, earth, guard_deg=None))
            area += a
            mx += sx
            my += sy
    if not math.isfinite(area) or abs(area) < 1e-12:
        raise DegenerateGeometry("polygon has zero area")
    lat, lon = unproject_array(np.array([[mx / area, my / area]]), origin, earth)[0]
    return GeoPoint(float(lat), float(lon))


def area_km2(poly: "Polygon | MultiPolygon", earth: EarthModel = EARTH) -> float:
    mp = MultiPolygon.of(poly)
    origin = bbox_center(mp)
    return float(sum(
        _ring_moments(project_array(ring, origin, earth, guard_deg=None))[0]
        for part in mp.parts for ring in part.rings()
    ))


def mean_location(points: Sequence[GeoPoint]) -> GeoPoint:
    """Arithmetic mean of member coordinates (longitudes unwrapped around the first)."""
    arr = points_to_array(points)
    if arr.size == 0:
        raise DegenerateGeometry("no points to average")
    ref = arr[0, 1]
    lon = ref + (arr[:, 1] - ref + 180.0) % 360.0 - 180.0
    return GeoPoint(float(arr[:, 0].mean()), float(lon.mean()))
