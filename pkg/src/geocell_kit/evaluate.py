"""Geolocalization metrics: radius accuracies, error statistics, GeoGuessr score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput
from .geo import EARTH, EarthModel, GeoPoint, haversine_array

RADII_KM = (1, 25, 200, 750, 2500)
GEOGUESSR_MAX = 5000.0
GEOGUESSR_SCALE_KM = 1492.7


@dataclass(frozen=True)
class EvalPair:
    prediction: GeoPoint
    truth: GeoPoint
    pred_iso: str | None = None
    true_iso: str | None = None


@dataclass(frozen=True)
class MetricsReport:
    count: int
    median_error_km: float
    mean_error_km: float
    pct_at: dict[int, float]
    country_accuracy: float | None = None
    geoguessr_score_mean: float | None = None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "median_error_km": self.median_error_km,
            "mean_error_km": self.mean_error_km,
            "pct_at": {str(r): v for r, v in self.pct_at.items()},
            "country_accuracy": self.country_accuracy,
            "geoguessr_score_mean": self.geoguessr_score_mean,
        }

    def csv_header(self) -> list[str]:
        return (["count", "median_error_km", "mean_error_km"]
                + [f"pct_at_{r}km" for r in self.pct_at]
                + ["country_accuracy", "geoguessr_score_mean"])

    def csv_row(self) -> list[str]:
        vals = [self.count, self.median_error_km, self.mean_error_km, *self.pct_at.values(),
                self.country_accuracy, self.geoguessr_score_mean]
        return ["" if v is None else (repr(v) if isinstance(v, float) else str(v)) for v in vals]


def geoguessr_score(error_km):
    """5000 * exp(-error_km / 1492.7); accepts scalars or arrays."""
    e = np.asarray(error_km, dtype=np.float64)
    if np.any(e < 0) or np.any(np.isnan(e)):
        raise ValueError("error_km must be non-negative")
    out = GEOGUESSR_MAX * np.exp(-e / GEOGUESSR_SCALE_KM)
    return float(out) if out.ndim == 0 else out


def median(values) -> float:
    """Median with the even-count midpoint convention."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise EmptyInput("median of an empty sequence")
    mid = n // 2
    return float(v[mid]) if n % 2 else float((v[mid - 1] + v[mid]) / 2.0)


def pct_within(errors, radius_km: float) -> float:
    e = np.asarray(errors, dtype=np.float64)
    return 100.0 * np.count_nonzero(e <= radius_km) / len(e)


def evaluate_errors(errors, radii: Sequence[int] = RADII_KM,
                    country_hits: Sequence[bool] | None = None) -> MetricsReport:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise EmptyInput("no predictions to evaluate")
    country = None
    if country_hits is not None and len(country_hits):
        country = float(np.mean(country_hits))
    return MetricsReport(
        count=int(e.size),
        median_error_km=median(e),
        mean_error_km=float(e.mean()),
        pct_at={int(r): pct_within(e, r) for r in radii},
        country_accuracy=country,
        geoguessr_score_mean=float(np.mean(geoguessr_score(e))),
    )


def evaluate(pairs: Sequence[EvalPair], earth: EarthModel = EARTH,
             radii: Sequence[int] = RADII_KM) -> MetricsReport:
    """Haversine errors summarized; radius thresholds are inclusive.

    Country accuracy covers only pairs where both ISO codes are present and
    is None when no pair has both.
    """
    if not pairs:
        raise EmptyInput("no predictions to evaluate")
    plat = np.array([p.prediction.lat for p in pairs])
    plon = np.array([p.prediction.lon for p in pairs])
    tlat = np.array([p.truth.lat for p in pairs])
    tlon = np.array([p.truth.lon for p in pairs])
    errors = haversine_array(plat, plon, tlat, tlon, earth)
    hits = [p.pred_iso == p.true_iso for p in pairs if p.pred_iso and p.true_iso]
    return evaluate_errors(errors, radii, hits)


def is_finite_report(report: MetricsReport) -> bool:
    vals = [report.median_error_km, report.mean_error_km, *report.pct_at.values()]
    return all(math.isfinite(v) for v in vals)
