"""Haversine-smoothed labels and the losses that consume them.

``smooth_label`` follows the smoothing equation literally: no clamping, no
normalization. Values above 1 occur whenever another cell's centroid is
closer to the sample than its own cell's centroid; ``overshoot_count``
reports how often that happens in a label matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ClassOutOfRange, ConfigError, DimensionMismatch, NonFinite
from .geo import EARTH, EarthModel, haversine_array
from .geocell import GeocellSet, Sample

TAU_PIGEON = 75.0
TAU_PIGEOTTO = 65.0
NUM_CLIMATE_CLASSES = 28
NUM_MONTHS = 12
REGRESSION_TARGETS = (
    "temp_avg", "temp_range", "precip_avg", "precip_range", "elevation", "population_density",
)
# targets regressed in log space
LOG_TARGETS = frozenset({"elevation", "population_density"})


@dataclass(frozen=True)
class SmoothedLabel:
    sample_id: str
    values: np.ndarray


def smoothing_weights(dist_to_cells: np.ndarray, true_index: np.ndarray | int,
                      tau: float) -> np.ndarray:
    """exp(-(d_i - d_true) / tau) for a (n, cells) or (cells,) distance array."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    d = np.asarray(dist_to_cells, dtype=np.float64)
    if d.ndim == 1:
        return np.exp(-(d - d[int(true_index)]) / tau)
    rows = np.arange(d.shape[0])
    true_d = d[rows, np.asarray(true_index)]
    return np.exp(-(d - true_d[:, None]) / tau)


def smooth_label(sample: Sample, true_cell: int, cells: GeocellSet, tau: float,
                 earth: EarthModel = EARTH, normalize: bool = False) -> SmoothedLabel:
    """Smoothed target over every cell for one sample.

    With ``normalize=True`` the vector is divided by its sum; the default
    leaves it unnormalized.
    """
    clat, clon = cells.centroid_arrays()
    d = haversine_array(sample.location.lat, sample.location.lon, clat, clon, earth)
    y = smoothing_weights(d, cells.position(true_cell), tau)
    if normalize:
        y = y / y.sum()
    return SmoothedLabel(sample.id, y)


def smooth_label_matrix(samples: Sequence[Sample], true_cells: Sequence[int], cells: GeocellSet,
                        tau: float, earth: EarthModel = EARTH, normalize: bool = False) -> np.ndarray:
    """Row-per-sample label matrix, columns in ``cells`` order."""
    clat, clon = cells.centroid_arrays()
    lat = np.array([s.location.lat for s in samples])
    lon = np.array([s.location.lon for s in samples])
    d = haversine_array(lat[:, None], lon[:, None], clat[None, :], clon[None, :], earth)
    true_idx = np.array([cells.position(c) for c in true_cells], dtype=np.int64)
    y = smoothing_weights(d, true_idx, tau)
    if normalize:
        y = y / y.sum(axis=1, keepdims=True)
    return y


def overshoot_count(labels: np.ndarray) -> int:
    """Entries strictly above 1 (a foreign centroid nearer than the true one)."""
    return int(np.count_nonzero(np.asarray(labels) > 1.0))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def haversine_loss(probs, label) -> float:
    """-sum_i log(p_i) * y_i.

    Raises:
        DimensionMismatch: vector lengths differ.
        NonFinite: some p_i == 0 where y_i > 0.
    """
    y = label.values if isinstance(label, SmoothedLabel) else np.asarray(label, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionMismatch(f"probabilities {p.shape} vs label {y.shape}")
    active = y > 0
    if np.any(p[active] <= 0):
        raise NonFinite("zero probability on a cell with positive target")
    return float(-np.sum(np.log(p[active]) * y[active]))


def haversine_loss_from_logits(logits, label) -> float:
    """Same loss computed stably from unnormalized scores."""
    y = label.values if isinstance(label, SmoothedLabel) else np.asarray(label, dtype=np.float64)
    return float(-np.sum(log_softmax(logits) * y))


@dataclass(frozen=True)
class MultiTaskLossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    mode: str = "balanced"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        if self.mode not in ("balanced", "fixed"):
            raise ConfigError(f"mode must be 'balanced' or 'fixed', got {self.mode!r}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "mode": self.mode}


def multitask_weights(loc: float, climate: float, month: float, reg: float,
                      config: MultiTaskLossConfig) -> tuple[float, float, float]:
    """Effective (alpha, beta, gamma).

    In balanced mode the configured weights are rescaled by a common factor
    so the weighted auxiliary losses sum to the location loss.
    """
    a, b, g = config.alpha, config.beta, config.gamma
    if config.mode == "fixed":
        return a, b, g
    aux = a * climate + b * month + g * reg
    if aux == 0:
        return a, b, g
    s = loc / aux
    return a * s, b * s, g * s


def multitask_loss(loc: float, climate: float, month: float, reg: float,
                   config: MultiTaskLossConfig = MultiTaskLossConfig()) -> float:
    values = (loc, climate, month, reg)
    if not all(math.isfinite(v) for v in values):
        raise NonFinite(f"component losses must be finite, got {values}")
    a, b, g = multitask_weights(loc, climate, month, reg, config)
    return loc + a * climate + b * month + g * reg


def cross_entropy(probs, target: int, num_classes: int) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (num_classes,):
        raise DimensionMismatch(f"expected {num_classes} class probabilities, got {p.shape}")
    if not 0 <= target < num_classes:
        raise ClassOutOfRange(f"class {target} outside [0, {num_classes})")
    if p[target] <= 0:
        raise NonFinite("zero probability on the target class")
    return float(-math.log(p[target]))


def regression_transform(name: str, value: float) -> float:
    return math.log1p(value) if name in LOG_TARGETS else float(value)


@dataclass(frozen=True)
class AuxiliaryLosses:
    climate: float
    month: float
    regression: float
    per_target: dict[str, float]


def auxiliary_losses(predictions: dict, targets: dict,
                     regression_targets: Sequence[str] = REGRESSION_TARGETS,
                     num_climate_classes: int = NUM_CLIMATE_CLASSES) -> AuxiliaryLosses:
    """Climate and month cross-entropy plus the mean of per-target MSEs.

    ``predictions`` holds ``climate`` and ``month`` probability vectors and
    one predicted value per regression target (already in model space);
    ``targets`` holds the climate class index, the month (1-12) and raw
    regression values, which are log1p-transformed for elevation and
    population density.
    """
    month = int(targets["month"])
    if not 1 <= month <= NUM_MONTHS:
        raise ClassOutOfRange(f"month {month} outside 1..12")
    ce_climate = cross_entropy(predictions["climate"], int(targets["climate"]), num_climate_classes)
    ce_month = cross_entropy(predictions["month"], month - 1, NUM_MONTHS)
    per = {}
    for name in regression_targets:
        t = regression_transform(name, float(targets[name]))
        if not math.isfinite(t):
            raise NonFinite(f"regression target {name} is not finite")
        per[name] = (float(predictions[name]) - t) ** 2
    reg = float(np.mean(list(per.values()))) if per else 0.0
    return AuxiliaryLosses(ce_climate, ce_month, reg, per)
