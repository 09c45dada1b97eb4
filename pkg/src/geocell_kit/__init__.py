"""Semantic geocells, distance-smoothed labels, cluster retrieval and metrics
for image geolocalization pipelines."""

from __future__ import annotations

__version__ = "0.1.0"

from .clustering import OpticsParams, OpticsResult, extract_xi_clusters, optics_order
from .errors import (
    ConfigError,
    DataContractError,
    GeocellKitError,
    InputError,
    InvariantViolation,
)
from .evaluate import EvalPair, MetricsReport, evaluate, evaluate_errors, geoguessr_score
from .geo import EARTH, EarthModel, GeoPoint, MultiPolygon, Polygon, haversine, point_in_polygon
from .geocell import (
    AdminUnit,
    BuilderConfig,
    Geocell,
    GeocellSet,
    Sample,
    assign_cell,
    build_naive_geocells,
    build_semantic_geocells,
    merge_admin_cells,
    split_cell_optics_voronoi,
)
from .labels import (
    MultiTaskLossConfig,
    SmoothedLabel,
    haversine_loss,
    multitask_loss,
    smooth_label,
    smooth_label_matrix,
)
from .refine import (
    ClusterIndex,
    PredictionRecord,
    RefineParams,
    build_cluster_index,
    load_index,
    refine_topk,
    save_index,
)

__all__ = [
    "AdminUnit", "BuilderConfig", "ClusterIndex", "ConfigError", "DataContractError", "EARTH",
    "EarthModel", "EvalPair", "GeoPoint", "Geocell", "GeocellKitError", "GeocellSet",
    "InputError", "InvariantViolation", "MetricsReport", "MultiPolygon", "MultiTaskLossConfig",
    "OpticsParams", "OpticsResult", "Polygon", "PredictionRecord", "RefineParams", "Sample",
    "SmoothedLabel", "assign_cell", "build_cluster_index", "build_naive_geocells",
    "build_semantic_geocells", "evaluate", "evaluate_errors", "extract_xi_clusters",
    "geoguessr_score", "haversine", "haversine_loss", "load_index", "merge_admin_cells",
    "multitask_loss", "optics_order", "point_in_polygon", "refine_topk", "save_index",
    "smooth_label", "smooth_label_matrix", "split_cell_optics_voronoi",
]
