"""OPTICS ordering with xi-steep cluster extraction.

The ordering step runs on a dense distance matrix (the per-cell point counts
this package deals with are small), built from either a named metric
(``"haversine"`` over (lat, lon) degrees, ``"euclidean"``) or any callable.
Clusters are extracted with the xi method and flattened to the most specific
(leaf) clusters so that the result is a partition plus noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError
from .geo import DEFAULT_RADIUS_KM, GeoPoint

Metric = Union[str, Callable[[np.ndarray, np.ndarray], float]]


@dataclass(frozen=True)
class OpticsParams:
    min_samples: int = 3
    xi: float = 0.15
    max_eps: float = math.inf

    def __post_init__(self):
        if int(self.min_samples) != self.min_samples or self.min_samples < 2:
            raise ConfigError(f"min_samples must be an integer >= 2, got {self.min_samples}")
        if not 0.0 < self.xi < 1.0:
            raise ConfigError(f"xi must lie in (0, 1), got {self.xi}")
        if not self.max_eps > 0:
            raise ConfigError(f"max_eps must be positive, got {self.max_eps}")

    def to_dict(self) -> dict:
        return {"min_samples": int(self.min_samples), "xi": float(self.xi),
                "max_eps": None if math.isinf(self.max_eps) else float(self.max_eps)}

    @classmethod
    def from_dict(cls, d: dict) -> "OpticsParams":
        eps = d.get("max_eps")
        return cls(int(d["min_samples"]), float(d["xi"]), math.inf if eps is None else float(eps))


@dataclass(frozen=True)
class OpticsResult:
    """Reachability plot plus extracted clusters.

    ``reachability``, ``core_distances`` and ``predecessor`` are in ordering
    order; ``clusters`` are inclusive (start, end) spans over the ordering
    after flattening, ``hierarchy`` holds every span found before flattening.
    """

    ordering: np.ndarray
    reachability: np.ndarray
    core_distances: np.ndarray
    predecessor: np.ndarray | None
    min_samples: int
    clusters: tuple[tuple[int, int], ...] = ()
    hierarchy: tuple[tuple[int, int], ...] = ()
    noise: frozenset[int] = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return len(self.ordering)

    def members(self, k: int) -> list[int]:
        s, e = self.clusters[k]
        return sorted(int(i) for i in self.ordering[s:e + 1])

    @property
    def labels(self) -> np.ndarray:
        """Cluster label per original index, -1 for noise."""
        return labels_from_spans(self.ordering, self.clusters)


def labels_from_spans(ordering: np.ndarray, spans: Sequence[tuple[int, int]]) -> np.ndarray:
    labels = np.full(len(ordering), -1, dtype=np.int64)
    for k, (s, e) in enumerate(spans):
        labels[np.asarray(ordering[s:e + 1])] = k
    return labels


def distance_matrix(points, metric: Metric = "euclidean",
                    radius_km: float = DEFAULT_RADIUS_KM) -> np.ndarray:
    if len(points) and isinstance(points[0], GeoPoint):
        points = [(p.lat, p.lon) for p in points]
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if metric == "haversine":
        return kernels.haversine_matrix(pts[:, 0], pts[:, 1], pts[:, 0], pts[:, 1], radius_km)
    if metric == "euclidean":
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if callable(metric):
        n = len(pts)
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = float(metric(pts[i], pts[j]))
        return d
    raise ConfigError(f"unknown metric {metric!r}")


def optics_order(points, params: OpticsParams, metric: Metric = "euclidean",
                 radius_km: float = DEFAULT_RADIUS_KM) -> OpticsResult:
    """Run OPTICS and extract xi clusters.

    Ties in the expansion order go to the lowest input index, so the ordering
    is fully determined by the input order.
    """
    n = len(points)
    if n == 0:
        raise ConfigError("optics_order needs at least one point")
    dist = distance_matrix(points, metric, radius_km)
    return optics_from_distances(dist, params)


def optics_from_distances(dist: np.ndarray, params: OpticsParams) -> OpticsResult:
    ordering, reach, core, pred = kernels.optics_order(dist, int(params.min_samples),
                                                       float(params.max_eps))
    result = OpticsResult(
        ordering=np.asarray(ordering, dtype=np.int64),
        reachability=np.asarray(reach)[ordering],
        core_distances=np.asarray(core)[ordering],
        predecessor=np.asarray(pred)[ordering],
        min_samples=int(params.min_samples),
    )
    return extract_xi_clusters(result, params.xi)


# -- xi extraction -----------------------------------------------------------


def _extend(steep, xward, start, min_samples, stop=None):
    """Grow a steep region from ``start``; returns its last index.

    A region tolerates at most ``min_samples`` consecutive non-steep points
    that still move in the same direction. ``stop(index)`` may veto an index.
    """
    n = len(steep)
    non_steep = 0
    end = start
    index = start
    while index < n:
        if steep[index] and (stop is None or not stop(index)):
            non_steep = 0
            end = index
        elif not xward[index]:
            non_steep += 1
            if non_steep > min_samples:
                break
        else:
            return end
        index += 1
    return end


def _predecessor_ok(reach, pred, ordering, s, e):
    while s < e:
        if reach[s] > reach[e]:
            return s, e
        p = pred[e]
        if p in set(int(i) for i in ordering[s:e]):
            return s, e
        e -= 1
    return None


def xi_spans(reachability, xi, min_samples, min_cluster_size=None,
             ordering=None, predecessor=None) -> list[tuple[int, int]]:
    """All xi-steep cluster spans of a reachability plot, smaller first within each
    steep-up area.

    An infinite sentinel closes the plot so that a trailing cluster is found.
    The sentinel may not pull the last point into a steep-up area that starts
    far below it; such a point is the top of the climb, not a cluster member.
    """
    if min_cluster_size is None:
        min_cluster_size = min_samples
    r = np.append(np.asarray(reachability, dtype=np.float64), np.inf)
    n = len(r) - 1
    xic = 1.0 - xi
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = r[:-1] / r[1:]
    steep_up = ratio <= xic
    steep_down = ratio >= 1.0 / xic
    down = ratio > 1.0
    up = ratio < 1.0

    sdas: list[dict] = []
    spans: list[tuple[int, int]] = []
    index = 0
    mib = 0.0

    def filter_sdas(mib):
        if np.isinf(mib):
            return []
        kept = [d for d in sdas if mib <= r[d["start"]] * xic]
        for d in kept:
            d["mib"] = max(d["mib"], mib)
        return kept

    for steep_index in np.flatnonzero(steep_up | steep_down):
        steep_index = int(steep_index)
        if steep_index < index:
            continue
        mib = max(mib, float(np.max(r[index:steep_index + 1])))
        if steep_down[steep_index]:
            sdas = filter_sdas(mib)
            d_end = _extend(steep_down, up, steep_index, min_samples)
            sdas.append({"start": steep_index, "end": d_end, "mib": 0.0})
            index = d_end + 1
            mib = float(r[index])
            continue

        sdas = filter_sdas(mib)
        u_start = steep_index

        def stop(i, u_start=u_start):
            return i == n - 1 and i > u_start and r[u_start] <= r[i] * xic

        u_end = _extend(steep_up, down, u_start, min_samples, stop)
        index = u_end + 1
        mib = float(r[index])

        found = []
        for d in sdas:
            c_start, c_end = d["start"], u_end
            if r[c_end + 1] * xic < d["mib"]:
                continue
            d_max = r[d["start"]]
            if d_max * xic >= r[c_end + 1]:
                while r[c_start + 1] > r[c_end + 1] and c_start < d["end"]:
                    c_start += 1
            elif r[c_end + 1] * xic >= d_max:
                while r[c_end - 1] > d_max and c_end > u_start:
                    c_end -= 1
            if predecessor is not None and ordering is not None:
                fixed = _predecessor_ok(r, predecessor, ordering, c_start, c_end)
                if fixed is None:
                    continue
                c_start, c_end = fixed
            if c_end - c_start + 1 < min_cluster_size:
                continue
            if c_start > d["end"] or c_end < u_start:
                continue
            found.append((int(c_start), int(c_end)))
        found.reverse()
        spans.extend(found)
    return spans


def flatten_leaves(spans: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Keep the most specific clusters: smallest first, skipping any overlap."""
    taken: list[tuple[int, int]] = []
    for s, e in sorted(set(spans), key=lambda se: (se[1] - se[0], se[0])):
        if all(e < ts or s > te for ts, te in taken):
            taken.append((s, e))
    return sorted(taken)


def extract_xi_clusters(result: OpticsResult, xi: float) -> OpticsResult:
    """Return ``result`` with xi clusters (flattened leaves) and noise filled in."""
    if not 0.0 < xi < 1.0:
        raise ConfigError(f"xi must lie in (0, 1), got {xi}")
    hierarchy = xi_spans(result.reachability, xi, result.min_samples,
                         ordering=result.ordering, predecessor=result.predecessor)
    leaves = flatten_leaves(hierarchy)
    labels = labels_from_spans(result.ordering, leaves)
    noise = frozenset(int(i) for i in np.flatnonzero(labels < 0))
    return OpticsResult(
        ordering=result.ordering,
        reachability=result.reachability,
        core_distances=result.core_distances,
        predecessor=result.predecessor,
        min_samples=result.min_samples,
        clusters=tuple(leaves),
        hierarchy=tuple(hierarchy),
        noise=noise,
    )


def cluster_members(result: OpticsResult) -> list[list[int]]:
    """Member index lists per cluster, in span order."""
    return [result.members(k) for k in range(len(result.clusters))]
