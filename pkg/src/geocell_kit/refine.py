"""Location-cluster retrieval and top-K cross-cell refinement.

Training samples inside each geocell are grouped by OPTICS over their
locations; OPTICS noise points become singleton clusters so every training
location stays reachable. A query embedding is matched against cluster mean
embeddings in each candidate cell, the per-cell distances are turned into a
temperature softmax, fused with the classifier's cell probabilities, and the
final guess is the closest member of the winning cluster.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import formats, kernels
from .clustering import OpticsParams, optics_order
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyCell,
    FormatError,
    MissingEmbedding,
    UnknownCell,
)
from .geo import GeoPoint, haversine, mean_location
from .geocell import GeocellSet, Sample, _parallel_map

INDEX_FORMAT = "geocell-kit/cluster-index/1"


@dataclass(frozen=True)
class RefineParams:
    top_k: int = 5
    softmax_temperature: float = 1.6
    max_refine_distance_km: float | None = 1000.0
    per_sample: bool = False

    def __post_init__(self):
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise ConfigError(f"top_k must be an integer >= 1, got {self.top_k}")
        if not (self.softmax_temperature > 0 and math.isfinite(self.softmax_temperature)):
            raise ConfigError(f"softmax_temperature must be positive, got {self.softmax_temperature}")
        if self.max_refine_distance_km is not None and not self.max_refine_distance_km > 0:
            raise ConfigError("max_refine_distance_km must be positive or None")

    def to_dict(self) -> dict:
        return {"top_k": self.top_k, "softmax_temperature": self.softmax_temperature,
                "max_refine_distance_km": self.max_refine_distance_km,
                "per_sample": self.per_sample}


PIGEON_REFINE = RefineParams(5, 1.6, 1000.0)
PIGEOTTO_REFINE = RefineParams(40, 0.6, None)
PIGEON_CLUSTER_OPTICS = OpticsParams(3, 0.15)
PIGEOTTO_CLUSTER_OPTICS = OpticsParams(10, 0.1)


@dataclass(frozen=True)
class LocationCluster:
    cluster_id: int
    cell_id: int
    member_ids: tuple[str, ...]
    member_rows: np.ndarray
    mean_embedding: np.ndarray
    centroid: GeoPoint
    singleton: bool = False


@dataclass(frozen=True)
class PredictionRecord:
    query: np.ndarray
    topk: tuple[tuple[int, float], ...]
    location: GeoPoint | None = None
    cluster_id: int | None = None
    sample_id: str | None = None
    score: float | None = None
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class ClusterIndex:
    """Immutable retrieval index; safe to share between threads."""

    dim: int
    params: OpticsParams | None
    sample_ids: tuple[str, ...]
    sample_embeddings: np.ndarray
    sample_lat: np.ndarray
    sample_lon: np.ndarray
    clusters: tuple[LocationCluster, ...]
    cell_clusters: Mapping[int, tuple[int, ...]]
    cell_centroids: Mapping[int, GeoPoint]
    _cell_means: Mapping[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for arr in (self.sample_embeddings, self.sample_lat, self.sample_lon):
            arr.flags.writeable = False
        if not self._cell_means:
            means = {}
            for cid, cl in self.cell_clusters.items():
                if cl:
                    m = np.stack([self.clusters[k].mean_embedding for k in cl])
                    m.flags.writeable = False
                    means[cid] = m
            object.__setattr__(self, "_cell_means", means)

    @property
    def cluster_count(self) -> int:
        return len(self.clusters)

    def cell_means(self, cell_id: int) -> np.ndarray:
        if cell_id not in self.cell_clusters:
            raise UnknownCell(f"cell {cell_id} is not in the index")
        if cell_id not in self._cell_means:
            raise EmptyCell(f"cell {cell_id} has no clusters")
        return self._cell_means[cell_id]

    def sample_location(self, row: int) -> GeoPoint:
        return GeoPoint(float(self.sample_lat[row]), float(self.sample_lon[row]))


def _embedding_lookup(embeddings) -> tuple[list[str], np.ndarray]:
    if isinstance(embeddings, tuple) and len(embeddings) == 2:
        ids, mat = embeddings
        return list(ids), np.asarray(mat, dtype=np.float32)
    ids = list(embeddings)
    return ids, np.stack([np.asarray(embeddings[i], dtype=np.float32) for i in ids])


def _f32_mean(rows: np.ndarray) -> np.ndarray:
    # means are stored at float32 precision so a saved index reloads identically
    return rows.astype(np.float64).mean(axis=0).astype(np.float32).astype(np.float64)


def build_cluster_index(cells: GeocellSet, samples: Sequence[Sample], embeddings,
                        params: OpticsParams | None = PIGEON_CLUSTER_OPTICS) -> ClusterIndex:
    """Cluster each cell's training samples and precompute mean embeddings.

    ``embeddings`` is either ``(ids, matrix)`` or a mapping id -> vector.
    With ``params=None`` every sample becomes its own cluster.

    Raises:
        MissingEmbedding: a cell member has no embedding.
    """
    emb_ids, emb = _embedding_lookup(embeddings)
    row_of = {sid: i for i, sid in enumerate(emb_ids)}
    by_id = {s.id: s for s in samples}
    member_ids = [m for c in cells for m in c.members]
    missing = [m for m in member_ids if m not in row_of]
    if missing:
        raise MissingEmbedding(f"{len(missing)} sample(s) lack embeddings: {missing[:5]}")
    if emb.ndim != 2:
        raise DimensionMismatch("embedding matrix must be 2-D")

    # index-local sample table, in cell order
    sample_ids = tuple(member_ids)
    local_row = {sid: i for i, sid in enumerate(sample_ids)}
    sample_emb = emb[[row_of[m] for m in sample_ids]].astype(np.float64)
    lat = np.array([by_id[m].location.lat for m in sample_ids], dtype=np.float64)
    lon = np.array([by_id[m].location.lon for m in sample_ids], dtype=np.float64)

    def cluster_cell(cell) -> list[tuple[list[int], bool]]:
        rows = [local_row[m] for m in cell.members]
        if not rows:
            return []
        groups: list[tuple[list[int], bool]] = []
        if params is not None and len(rows) >= 2:
            res = optics_order(np.column_stack([lat[rows], lon[rows]]), params, "haversine")
            for k in range(len(res.clusters)):
                groups.append(([rows[i] for i in res.members(k)], False))
            noise = sorted(res.noise)
        else:
            noise = range(len(rows))
        groups.extend(([rows[i]], True) for i in noise)
        return groups

    per_cell = _parallel_map(cluster_cell, list(cells.cells))
    clusters: list[LocationCluster] = []
    cell_clusters: dict[int, tuple[int, ...]] = {}
    for cell, groups in zip(cells.cells, per_cell):
        ids = []
        for rows, singleton in groups:
            rows_arr = np.asarray(rows, dtype=np.int64)
            rows_arr.flags.writeable = False
            cid = len(clusters)
            clusters.append(LocationCluster(
                cluster_id=cid,
                cell_id=cell.cell_id,
                member_ids=tuple(sample_ids[r] for r in rows),
                member_rows=rows_arr,
                mean_embedding=_f32_mean(sample_emb[rows_arr]),
                centroid=mean_location([GeoPoint(lat[r], lon[r]) for r in rows]),
                singleton=singleton,
            ))
            ids.append(cid)
        cell_clusters[cell.cell_id] = tuple(ids)
    return ClusterIndex(
        dim=int(emb.shape[1]),
        params=params,
        sample_ids=sample_ids,
        sample_embeddings=sample_emb,
        sample_lat=lat,
        sample_lon=lon,
        clusters=tuple(clusters),
        cell_clusters=cell_clusters,
        cell_centroids={c.cell_id: c.centroid for c in cells},
    )


def _check_query(query, index: ClusterIndex) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise DimensionMismatch(f"query has dimension {q.shape[0]}, index has {index.dim}")
    if not np.all(np.isfinite(q)):
        raise DimensionMismatch("query embedding must be finite")
    return q


def select_cluster_in_cell(query, cell_id: int, index: ClusterIndex) -> tuple[int, float]:
    """Cluster of ``cell_id`` whose mean embedding is nearest the query.

    Ties go to the lower cluster id.
    """
    q = _check_query(query, index)
    k, d = kernels.nearest_row(q, index.cell_means(cell_id))
    return index.cell_clusters[cell_id][k], float(d)


def refine_within_cluster(query, cluster_id: int, index: ClusterIndex) -> tuple[str, GeoPoint]:
    """Member of the cluster with the nearest embedding (ties: first member)."""
    q = _check_query(query, index)
    cl = index.clusters[cluster_id]
    k, _ = kernels.nearest_row(q, index.sample_embeddings[cl.member_rows])
    row = int(cl.member_rows[k])
    return index.sample_ids[row], index.sample_location(row)


def _best_sample_in_cell(q, cell_id, index) -> tuple[int, float]:
    """Per-sample variant: (cluster id of the nearest member, its distance)."""
    best = (math.inf, -1)
    for cid in index.cell_clusters.get(cell_id, ()):
        cl = index.clusters[cid]
        k, d = kernels.nearest_row(q, index.sample_embeddings[cl.member_rows])
        if d < best[0]:
            best = (d, cid)
    if best[1] < 0:
        raise EmptyCell(f"cell {cell_id} has no clusters")
    return best[1], best[0]


def distance_softmax(distances, temperature: float) -> np.ndarray:
    """softmax(-d / T); smaller distance, larger weight."""
    z = -np.asarray(distances, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def refine_topk(record: PredictionRecord, index: ClusterIndex,
                params: RefineParams = PIGEON_REFINE) -> PredictionRecord:
    """Fuse cell probabilities with embedding distances over the top-K cells.

    Raises:
        UnknownCell: a candidate cell is not in the index.
        DimensionMismatch: query dimension differs from the index.
    """
    q = _check_query(record.query, index)
    if not record.topk:
        raise EmptyCell("prediction has no candidate cells")
    for cid, p in record.topk:
        if cid not in index.cell_clusters:
            raise UnknownCell(f"cell {cid} is not in the index")
        if not (p >= 0 and math.isfinite(p)):
            raise ConfigError(f"probability for cell {cid} must be finite and >= 0")
    ranked = sorted(record.topk, key=lambda cp: (-cp[1], cp[0]))[: params.top_k]
    ranked = [(c, p) for c, p in ranked if index.cell_clusters[c]] or ranked[:1]

    cands = []
    for cid, p in ranked:
        if params.per_sample:
            cluster, d = _best_sample_in_cell(q, cid, index)
        else:
            cluster, d = select_cluster_in_cell(q, cid, index)
        cands.append((cid, p, cluster, d))

    fallback = False
    if params.max_refine_distance_km is not None:
        anchor = index.cell_centroids[ranked[0][0]]
        kept = [c for c in cands
                if haversine(index.clusters[c[2]].centroid, anchor) <= params.max_refine_distance_km]
        if not kept:
            kept, fallback = cands[:1], True
        cands = kept

    r = distance_softmax([c[3] for c in cands], params.softmax_temperature)
    fused = r * np.array([c[1] for c in cands])
    order = sorted(range(len(cands)), key=lambda k: (-fused[k], -cands[k][1], cands[k][0]))
    win = order[0]
    cluster = cands[win][2]
    sample_id, loc = refine_within_cluster(q, cluster, index)
    return replace(record, location=loc, cluster_id=int(cluster), sample_id=sample_id,
                   score=float(fused[win]), fallback=fallback)


# -- persistence -------------------------------------------------------------


def save_index(index: ClusterIndex, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": INDEX_FORMAT,
        "dim": index.dim,
        "optics": index.params.to_dict() if index.params is not None else None,
        "counts": {"samples": len(index.sample_ids), "clusters": index.cluster_count,
                   "cells": len(index.cell_clusters)},
        "cells": [{"cell_id": cid, "centroid_lat": index.cell_centroids[cid].lat,
                   "centroid_lon": index.cell_centroids[cid].lon}
                  for cid in index.cell_clusters],
        "clusters": [{"cluster_id": c.cluster_id, "cell_id": c.cell_id,
                      "singleton": c.singleton} for c in index.clusters],
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    means = np.stack([c.mean_embedding for c in index.clusters]) if index.clusters else \
        np.zeros((0, index.dim))
    formats.write_embeddings(d / "means.embd", d / "means.ids",
                             [str(c.cluster_id) for c in index.clusters], means)
    formats.write_embeddings(d / "samples.embd", d / "samples.ids", index.sample_ids,
                             index.sample_embeddings)
    with open(d / "membership.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "sample_id"])
        for c in index.clusters:
            for m in c.member_ids:
                w.writerow([c.cluster_id, m])
    with open(d / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "lat", "lon"])
        for sid, la, lo in zip(index.sample_ids, index.sample_lat, index.sample_lon):
            w.writerow([sid, repr(float(la)), repr(float(lo))])


def load_index(directory) -> ClusterIndex:
    d = Path(directory)
    manifest = json.loads(formats._open_existing(d / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != INDEX_FORMAT:
        raise FormatError(f"{d}: not a cluster index ({manifest.get('format')!r})")
    dim = int(manifest["dim"])
    _, means = formats.read_embeddings(d / "means.embd", d / "means.ids")
    sids, emb = formats.read_embeddings(d / "samples.embd", d / "samples.ids")
    if emb.shape[1] != dim or (len(means) and means.shape[1] != dim):
        raise DimensionMismatch(f"{d}: stored embeddings do not match dim {dim}")
    row_of = {s: i for i, s in enumerate(sids)}
    lat = np.empty(len(sids))
    lon = np.empty(len(sids))
    with open(d / "samples.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            i = row_of[r["sample_id"]]
            lat[i], lon[i] = float(r["lat"]), float(r["lon"])
    members: dict[int, list[str]] = {}
    with open(d / "membership.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            members.setdefault(int(r["cluster_id"]), []).append(r["sample_id"])
    clusters = []
    for k, c in enumerate(manifest["clusters"]):
        rows = np.array([row_of[m] for m in members[c["cluster_id"]]], dtype=np.int64)
        rows.flags.writeable = False
        clusters.append(LocationCluster(
            cluster_id=int(c["cluster_id"]),
            cell_id=int(c["cell_id"]),
            member_ids=tuple(members[c["cluster_id"]]),
            member_rows=rows,
            mean_embedding=means[k].astype(np.float64),
            centroid=mean_location([GeoPoint(lat[r], lon[r]) for r in rows]),
            singleton=bool(c["singleton"]),
        ))
    cell_clusters: dict[int, list[int]] = {int(c["cell_id"]): [] for c in manifest["cells"]}
    for c in clusters:
        cell_clusters[c.cell_id].append(c.cluster_id)
    optics = manifest.get("optics")
    return ClusterIndex(
        dim=dim,
        params=OpticsParams.from_dict(optics) if optics else None,
        sample_ids=tuple(sids),
        sample_embeddings=emb.astype(np.float64),
        sample_lat=lat,
        sample_lon=lon,
        clusters=tuple(clusters),
        cell_clusters={k: tuple(v) for k, v in cell_clusters.items()},
        cell_centroids={int(c["cell_id"]): GeoPoint(c["centroid_lat"], c["centroid_lon"])
                        for c in manifest["cells"]},
    )
