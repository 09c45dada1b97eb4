"""Deterministic synthetic worlds for tests, demos and the bundled fixture.

A world is a row of rectangular countries, each tiled by admin2 rectangles
grouped into admin1 columns, with samples drawn from dense "cities" plus a
uniform rural background. Optionally a detached island admin2 unit is added
to the last country.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geo import GeoPoint, MultiPolygon, Polygon, haversine_array
from .geocell import AdminUnit, BuilderConfig, Sample, build_semantic_geocells, resolve_admin2

KOPPEN_SAMPLE = ("Cfb", "Cfa", "Dfb", "BSk", "Csa")
MONTHS = tuple(range(1, 13))


@dataclass(frozen=True)
class CountrySpec:
    iso: str
    name: str
    origin: tuple[float, float]  # (lat, lon) of the south-west corner
    rows: int
    cols: int
    cell_deg: float
    drive_side: str = "right"


def rect(lat0: float, lon0: float, lat1: float, lon1: float) -> MultiPolygon:
    return MultiPolygon((Polygon([(lat0, lon0), (lat0, lon1), (lat1, lon1), (lat1, lon0)]),))


def make_admins(countries: list[CountrySpec], island: bool = False) -> list[AdminUnit]:
    units = []
    for c in countries:
        lat0, lon0 = c.origin
        for col in range(c.cols):
            a1 = f"{c.iso}.{col + 1}"
            for row in range(c.rows):
                units.append(AdminUnit(
                    level="admin2",
                    iso=c.iso,
                    admin1_id=a1,
                    admin2_id=f"{c.iso}.{col + 1}.{row + 1}",
                    geometry=rect(lat0 + row * c.cell_deg, lon0 + col * c.cell_deg,
                                  lat0 + (row + 1) * c.cell_deg, lon0 + (col + 1) * c.cell_deg),
                    admin1_name=f"Region {col + 1}",
                    country_name=c.name,
                ))
    if island:
        c = countries[-1]
        lat0, lon0 = c.origin
        lat_i = lat0 - 2.0 * c.cell_deg
        lon_i = lon0 + c.cols * c.cell_deg + 1.0
        units.append(AdminUnit(
            level="admin2", iso=c.iso, admin1_id=f"{c.iso}.isl", admin2_id=f"{c.iso}.isl.1",
            geometry=rect(lat_i, lon_i, lat_i + 0.3, lon_i + 0.3),
            admin1_name="Island", country_name=c.name,
        ))
    return units


def default_countries(scale: float = 1.0) -> list[CountrySpec]:
    return [
        CountrySpec("AAA", "Avalon", (40.0, 0.0), 3, 5, 0.5 * scale, "right"),
        CountrySpec("BBB", "Borduria", (40.0, 2.5 * scale), 3, 4, 0.5 * scale, "left"),
        CountrySpec("CCC", "Carpania", (40.0, 4.5 * scale), 3, 5, 0.5 * scale, "right"),
    ]


def lattice(rng: np.random.Generator, n: int, lat: float, lon: float, step_km: float,
            jitter: float = 0.01) -> list[tuple[float, float]]:
    """``n`` points on a square grid centered near (lat, lon), ``step_km`` apart.

    ``jitter`` is the per-coordinate noise as a fraction of the step. A
    near-uniform grid has a flat reachability profile, so OPTICS reports it
    as one cluster instead of fragmenting it the way a Gaussian blob is.
    """
    side = int(math.ceil(math.sqrt(n)))
    cells = [(i, j) for i in range(side) for j in range(side)][:n]
    out = []
    for i, j in cells:
        y = (i - side / 2 + rng.normal() * jitter) * step_km
        x = (j - side / 2 + rng.normal() * jitter) * step_km
        out.append((lat + y / 111.195, lon + x / (111.195 * math.cos(math.radians(lat)))))
    return out


def make_samples(admins: list[AdminUnit], n: int, seed: int = 0, n_cities: int = 6,
                 city_frac: float = 0.6, city_sigma_km: float = 4.0,
                 island_count: int = 5,
                 neighborhoods: Sequence[tuple[float, float]] = (),
                 neighborhood_size: int = 40,
                 neighborhood_step_km: float = 0.3) -> list[Sample]:
    """Draw ``n`` samples over the admin units' territory.

    ``neighborhoods`` lists (lat, lon) centers of dense lattice patches; their
    points count toward ``n``.
    """
    rng = np.random.default_rng(seed)
    main = [u for u in admins if not u.admin1_id.endswith(".isl")]
    islands = [u for u in admins if u.admin1_id.endswith(".isl")]
    bounds = np.array([u.geometry.bounds for u in main])
    lat_lo, lon_lo = bounds[:, 0].min(), bounds[:, 1].min()
    lat_hi, lon_hi = bounds[:, 2].max(), bounds[:, 3].max()
    pad = 0.05 * (lat_hi - lat_lo)
    city_lat = rng.uniform(lat_lo + pad, lat_hi - pad, n_cities)
    city_lon = rng.uniform(lon_lo + pad, lon_hi - pad, n_cities)

    pts: list[tuple[float, float]] = []
    for lat, lon in neighborhoods:
        pts.extend(lattice(rng, neighborhood_size, lat, lon, neighborhood_step_km))
    n_main = n - (island_count if islands else 0)
    n_city = int(round(n_main * city_frac))
    sigma_deg = city_sigma_km / 111.195
    n_city += len(pts)
    while len(pts) < n_city:
        k = int(rng.integers(n_cities))
        lat = city_lat[k] + rng.normal() * sigma_deg
        lon = city_lon[k] + rng.normal() * sigma_deg / math.cos(math.radians(city_lat[k]))
        if lat_lo < lat < lat_hi and lon_lo < lon < lon_hi:
            pts.append((lat, lon))
    while len(pts) < n_main:
        pts.append((rng.uniform(lat_lo, lat_hi), rng.uniform(lon_lo, lon_hi)))
    for u in islands:
        b = u.geometry.bounds
        for _ in range(island_count):
            pts.append((rng.uniform(b[0], b[2]), rng.uniform(b[1], b[3])))

    samples = []
    for i, (lat, lon) in enumerate(pts):
        samples.append(Sample(
            id=f"s{i:05d}",
            location=GeoPoint(round(lat, 6), round(lon, 6)),
            climate=KOPPEN_SAMPLE[int(rng.integers(len(KOPPEN_SAMPLE)))],
            month=int(rng.integers(1, 13)),
            bearing=float(np.round(rng.uniform(0, 360), 1)),
            elevation=float(np.round(rng.uniform(0, 1500), 1)),
            population_density=float(np.round(rng.lognormal(4, 1.5), 2)),
            temp_avg=float(np.round(rng.normal(12, 4), 2)),
            temp_range=float(np.round(rng.uniform(10, 30), 2)),
            precip_avg=float(np.round(rng.uniform(0.5, 5), 3)),
            precip_range=float(np.round(rng.uniform(1, 8), 3)),
        ))
    # drive side is a country attribute, so it follows admin resolution
    side = {c.iso: c.drive_side for c in default_countries()}
    resolved = resolve_admin2(samples, admins)
    return [replace(s, drive_side=side.get(r.country)) for s, r in zip(samples, resolved)]


def make_world(n: int = 5000, seed: int = 0, island: bool = True, scale: float = 1.0,
               **kw) -> tuple[list[Sample], list[AdminUnit]]:
    admins = make_admins(default_countries(scale), island=island)
    return make_samples(admins, n, seed=seed, **kw), admins


def drive_sides() -> dict[str, str]:
    return {c.iso: c.drive_side for c in default_countries()}


def location_embeddings(lat, lon, dim: int = 16, seed: int = 0, length_km: float = 40.0,
                        noise: float = 0.05, noise_seed: int | None = None) -> np.ndarray:
    """Random Fourier features of position, so nearby samples embed nearby.

    The feature map depends only on ``seed``; ``noise_seed`` draws the
    per-row perturbation (defaults to ``seed``).
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    km = np.column_stack([lat * 111.195, lon * 111.195 * np.cos(np.radians(lat))])
    basis = np.random.default_rng(seed)
    freq = basis.normal(size=(2, dim)) / length_km
    phase = basis.uniform(0, 2 * math.pi, dim)
    feats = math.sqrt(2.0 / dim) * np.cos(km @ freq + phase)
    jitter = np.random.default_rng(seed if noise_seed is None else noise_seed)
    return (feats + noise * jitter.normal(size=feats.shape)).astype(np.float32)


FIXTURE_SETTINGS = {
    "n": 600,
    "min_cell_size": 20,
    "neighborhoods": [(40.7, 1.3), (41.2, 5.6)],
    "neighborhood_size": 50,
    "queries": 20,
    "dim": 16,
    "top_k": 5,
}


def write_fixture(directory, seed: int = 7) -> None:
    """Write the small end-to-end fixture (samples, admins, embeddings,
    query embeddings, top-K predictions and a config file) to ``directory``."""
    from . import formats

    cfg = FIXTURE_SETTINGS
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    admins = make_admins(default_countries(), island=True)
    samples = make_samples(admins, cfg["n"], seed=seed,
                           neighborhoods=cfg["neighborhoods"],
                           neighborhood_size=cfg["neighborhood_size"])
    formats.write_samples_csv(samples, d / "samples.csv")
    formats.write_admins_geojson(admins, d / "admins.geojson")
    lat = np.array([s.location.lat for s in samples])
    lon = np.array([s.location.lon for s in samples])
    formats.write_embeddings(d / "embeddings.embd", d / "embeddings.ids", [s.id for s in samples],
                             location_embeddings(lat, lon, cfg["dim"], seed=seed))

    # held-out queries with their own noise and plausible top-K cell scores
    cells = build_semantic_geocells(samples, admins, BuilderConfig(min_cell_size=cfg["min_cell_size"]))
    queries = make_samples(admins, cfg["queries"] + 5, seed=seed + 1, island_count=0)[: cfg["queries"]]
    qlat = np.array([q.location.lat for q in queries])
    qlon = np.array([q.location.lon for q in queries])
    qids = [f"q{i:03d}" for i in range(len(queries))]
    formats.write_embeddings(d / "queries.embd", d / "queries.ids", qids,
                             location_embeddings(qlat, qlon, cfg["dim"], seed=seed, noise_seed=seed + 1))
    clat, clon = cells.centroid_arrays()
    rng = np.random.default_rng(seed + 2)
    rows = []
    for i in range(len(queries)):
        d_km = haversine_array(qlat[i], qlon[i], clat, clon)
        logits = -d_km / 60.0 + rng.gumbel(size=len(d_km)) * 0.5
        p = np.exp(logits - logits.max())
        p /= p.sum()
        top = np.argsort(-p, kind="stable")[: cfg["top_k"]]
        rows.append({"id": f"q{i:03d}", "embedding_row": i,
                     "topk": [(cells.cells[k].cell_id, round(float(p[k]), 6)) for k in top]})
    formats.write_predictions(d / "predictions.csv", rows)
    config = {
        "samples": "samples.csv", "admins": "admins.geojson",
        "embeddings": "embeddings.embd", "embedding_ids": "embeddings.ids",
        "queries": "queries.embd", "predictions": "predictions.csv",
        "min_cell_size": cfg["min_cell_size"], "seed": seed,
    }
    (d / "config.json").write_text(json.dumps(config, indent=1) + "\n", encoding="utf-8")
