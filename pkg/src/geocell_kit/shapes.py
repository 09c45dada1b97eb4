"""Bridges between our polygon types, shapely, and GeoJSON geometry.

Boolean operations (union, difference, clipping) and Voronoi diagrams are
delegated to shapely/GEOS; everything else in the package works on the
native ``Polygon``/``MultiPolygon`` types.
"""

from __future__ import annotations

import numpy as np
import shapely
from shapely import geometry as sg

from .errors import DegenerateGeometry, FormatError
from .geo import GeoPoint, MultiPolygon, Polygon, project_array, unproject_array

# snapping grid (degrees) applied after boolean ops to keep output stable
GRID_DEG = 1e-9


def to_shapely(poly: Polygon | MultiPolygon) -> sg.MultiPolygon:
    """Shapely geometry with x = lon, y = lat."""
    parts = []
    for part in MultiPolygon.of(poly).parts:
        ext = part.exterior[:, ::-1]
        holes = [h[:, ::-1] for h in part.holes]
        parts.append(sg.Polygon(ext, holes))
    return sg.MultiPolygon(parts)


def _polygons_of(geom) -> list[sg.Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, sg.Polygon):
        return [geom]
    if isinstance(geom, (sg.MultiPolygon, sg.GeometryCollection)):
        out = []
        for g in geom.geoms:
            out.extend(_polygons_of(g))
        return out
    return []


def from_shapely(geom, min_area: float = 0.0) -> MultiPolygon:
    """Convert a shapely (multi)polygon in lon/lat back to a MultiPolygon.

    Parts with area <= ``min_area`` (in squared degrees) are dropped.

    Raises:
        DegenerateGeometry: nothing with positive area remains.
    """
    parts = []
    for p in sorted(_polygons_of(geom), key=lambda g: (g.bounds, -g.area)):
        if p.area <= min_area:
            continue
        try:
            ext = np.asarray(p.exterior.coords)[:, ::-1]
            holes = tuple(np.asarray(r.coords)[:, ::-1] for r in p.interiors
                          if sg.Polygon(r).area > min_area)
            parts.append(Polygon(ext, holes))
        except DegenerateGeometry:
            continue
    if not parts:
        raise DegenerateGeometry("geometry is empty after conversion")
    return MultiPolygon(tuple(parts))


def clean(geom):
    """Snap to a fine grid and make valid; keeps results deterministic."""
    geom = shapely.set_precision(geom, GRID_DEG)
    if not geom.is_valid:
        geom = shapely.make_valid(geom)
    return geom


def union(geoms) -> sg.base.BaseGeometry:
    return clean(shapely.union_all([to_shapely(g) if not isinstance(g, sg.base.BaseGeometry) else g
                                    for g in geoms]))


def project_shape(geom, origin: GeoPoint):
    """Shapely lon/lat geometry to local km (x east, y north)."""

    def fwd(coords):
        xy = project_array(coords[:, ::-1], origin, guard_deg=None)
        return xy

    return shapely.transform(geom, fwd)


def unproject_shape(geom, origin: GeoPoint):
    def inv(coords):
        latlon = unproject_array(coords, origin)
        return latlon[:, ::-1]

    return shapely.transform(geom, inv)


# -- GeoJSON -----------------------------------------------------------------


def split_antimeridian(rings_lonlat: list[list]) -> list[tuple[list, list]]:
    """Split a GeoJSON polygon that crosses the antimeridian into parts.

    Returns a list of (exterior, holes) in lon/lat with lon in [-180, 180].
    """
    ext = np.asarray(rings_lonlat[0], dtype=np.float64)
    jumps = np.abs(np.diff(ext[:, 0]))
    if not np.any(jumps > 180.0):
        return [(rings_lonlat[0], list(rings_lonlat[1:]))]

    def shift(ring):
        r = np.asarray(ring, dtype=np.float64).copy()
        r[r[:, 0] < 0, 0] += 360.0
        return r

    shifted = sg.Polygon(shift(rings_lonlat[0]), [shift(h) for h in rings_lonlat[1:]])
    shifted = shapely.make_valid(shifted) if not shifted.is_valid else shifted
    out = []
    for box, offset in ((sg.box(-180, -90, 180, 90), 0.0), (sg.box(180, -90, 540, 90), -360.0)):
        piece = shifted.intersection(box)
        for p in _polygons_of(piece):
            if p.area <= 0:
                continue
            e = np.asarray(p.exterior.coords)
            e[:, 0] += offset
            hs = []
            for r in p.interiors:
                h = np.asarray(r.coords)
                h[:, 0] += offset
                hs.append(h.tolist())
            out.append((e.tolist(), hs))
    return out


def geometry_from_geojson(geom: dict) -> MultiPolygon:
    gtype = geom.get("type")
    if gtype == "Polygon":
        polys = [geom["coordinates"]]
    elif gtype == "MultiPolygon":
        polys = geom["coordinates"]
    else:
        raise FormatError(f"unsupported geometry type {gtype!r}")
    parts = []
    for rings in polys:
        for ext, holes in split_antimeridian(rings):
            parts.append(Polygon.from_lonlat(ext, holes))
    return MultiPolygon(tuple(parts))


def _ring_lonlat(ring: np.ndarray) -> list[list[float]]:
    coords = [[float(lon), float(lat)] for lat, lon in ring]
    coords.append(coords[0])
    return coords


def geometry_to_geojson(mp: MultiPolygon) -> dict:
    return {
        "type": "MultiPolygon",
        "coordinates": [
            [_ring_lonlat(p.exterior)] + [_ring_lonlat(h) for h in p.holes] for p in mp.parts
        ],
    }
