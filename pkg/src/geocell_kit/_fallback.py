"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one-for-one and are used when the compiled
extension is unavailable or ``GEOCELL_KIT_PURE=1`` is set.
"""

from __future__ import annotations

import numpy as np

OUTSIDE, INSIDE, BOUNDARY = 0, 1, 2


def haversine_pairs(lat1, lon1, lat2, lon2, radius):
    """Element-wise haversine distance for degree arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2, dtype=np.float64) - lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def haversine_matrix(lat1, lon1, lat2, lon2, radius):
    lat1 = np.asarray(lat1, dtype=np.float64)[:, None]
    lon1 = np.asarray(lon1, dtype=np.float64)[:, None]
    lat2 = np.asarray(lat2, dtype=np.float64)[None, :]
    lon2 = np.asarray(lon2, dtype=np.float64)[None, :]
    return haversine_pairs(lat1, lon1, lat2, lon2, radius)


def core_distances(dist, min_samples, max_eps):
    n = dist.shape[0]
    if n < min_samples:
        return np.full(n, np.inf)
    core = np.partition(dist, min_samples - 1, axis=1)[:, min_samples - 1].copy()
    core[core > max_eps] = np.inf
    return core


def optics_order(dist, min_samples, max_eps):
    """OPTICS ordering over a dense distance matrix.

    Returns ``(ordering, reachability, core, predecessor)``; reachability,
    core and predecessor are indexed by original point index.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    n = dist.shape[0]
    core = core_distances(dist, min_samples, max_eps)
    reach = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    processed = np.zeros(n, dtype=bool)
    ordering = np.empty(n, dtype=np.int64)
    candidate = np.full(n, np.inf)

    for step in range(n):
        # seeds are unprocessed points with a finite reachability
        j = int(np.argmin(candidate))
        if not np.isfinite(candidate[j]):
            j = int(np.flatnonzero(~processed)[0])
        processed[j] = True
        candidate[j] = np.inf
        ordering[step] = j
        if not np.isfinite(core[j]):
            continue
        row = dist[j]
        new = np.maximum(row, core[j])
        better = (~processed) & (row <= max_eps) & (new < reach)
        reach[better] = new[better]
        pred[better] = j
        candidate[better] = new[better]
    return ordering, reach, core, pred


def points_in_ring(px, py, rx, ry, eps):
    """Classify points against one closed ring (implicit closure)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    out = np.zeros(px.shape[0], dtype=np.int8)
    inside = np.zeros(px.shape[0], dtype=bool)
    boundary = np.zeros(px.shape[0], dtype=bool)
    m = len(rx)
    for k in range(m):
        ax, ay = rx[k], ry[k]
        bx, by = rx[(k + 1) % m], ry[(k + 1) % m]
        ex, ey = bx - ax, by - ay
        seg2 = ex * ex + ey * ey
        cross = ex * (py - ay) - ey * (px - ax)
        dot = (px - ax) * ex + (py - ay) * ey
        if seg2 > 0.0:
            on = (np.abs(cross) <= eps * np.sqrt(seg2)) & (dot >= -eps * np.sqrt(seg2)) & (
                dot <= seg2 + eps * np.sqrt(seg2)
            )
        else:
            on = (np.abs(px - ax) <= eps) & (np.abs(py - ay) <= eps)
        boundary |= on
        straddle = (ay > py) != (by > py)
        if np.any(straddle):
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = ex * (py - ay) / ey + ax
            inside ^= straddle & (px < xcross)
    out[inside] = INSIDE
    out[boundary] = BOUNDARY
    return out


def nearest_row(query, rows):
    """Index and Euclidean distance of the row closest to ``query``.

    Ties go to the lowest row index.
    """
    diff = np.asarray(rows, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    k = int(np.argmin(d2))
    return k, float(np.sqrt(d2[k]))


def row_distances(query, rows):
    diff = np.asarray(rows, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))
