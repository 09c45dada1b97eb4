"""Independent reference implementations used only by the tests.

Each oracle is written from the textbook definition with no shared code
paths into the package, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np

R_KM = 6371.0


def law_of_cosines_km(lat1, lon1, lat2, lon2, radius=R_KM):
    """Spherical law of cosines in extended precision."""
    ld = np.longdouble
    p1, p2 = np.radians(np.asarray(lat1, ld)), np.radians(np.asarray(lat2, ld))
    dl = np.radians(np.asarray(lon2, ld) - np.asarray(lon1, ld))
    c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(dl)
    return np.asarray(ld(radius) * np.arccos(np.clip(c, -1, 1)), dtype=np.float64)


def ray_cast(px, py, ring):
    """Even-odd ray casting on one ring given as (x, y) vertices."""
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xc:
                inside = not inside
    return inside


def convex_contains(px, py, hull):
    """Half-plane test for a counter-clockwise convex polygon (boundary inside)."""
    n = len(hull)
    for i in range(n):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % n]
        if (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) < -1e-12:
            return False
    return True


def random_convex_polygon(rng, center=(0.0, 0.0), radius=1.0, k=None):
    """Counter-clockwise convex polygon from sorted random angles on a circle."""
    k = k or int(rng.integers(3, 12))
    ang = np.sort(rng.uniform(0, 2 * math.pi, k))
    return [(center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)) for a in ang]


def textbook_optics(dist, min_samples):
    """OPTICS reachability by the original definition, O(n^2) with list scans.

    Returns (ordering, reachability in ordering order). Core distance is the
    min_samples-th smallest distance counting the point itself; ties in the
    seed list go to the lowest index.
    """
    n = len(dist)
    core = [sorted(dist[i])[min_samples - 1] if n >= min_samples else math.inf for i in range(n)]
    reach = [math.inf] * n
    done = [False] * n
    order = []
    for start in range(n):
        if done[start]:
            continue
        seeds = {start}
        while seeds:
            p = min(seeds, key=lambda j: (reach[j], j))
            seeds.discard(p)
            done[p] = True
            order.append(p)
            if math.isinf(core[p]):
                continue
            for q in range(n):
                if done[q]:
                    continue
                r = max(core[p], dist[p][q])
                if r < reach[q]:
                    reach[q] = r
                seeds.add(q)
    return order, [reach[i] for i in order]


def nearest_site(point, sites):
    d = np.hypot(sites[:, 0] - point[0], sites[:, 1] - point[1])
    return int(np.argmin(d)), float(d.min())


def sort_median(values):
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2


def brute_nearest(query, rows):
    best, best_d = -1, math.inf
    for i, r in enumerate(rows):
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(r, query)))
        if d < best_d:
            best, best_d = i, d
    return best, best_d
