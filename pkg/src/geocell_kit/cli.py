"""Command-line front end: ``geocell-kit {build|labels|index|refine|eval|serve}``.

Settings are layered: preset defaults, then ``--config`` JSON, then flags.
Every command writes ``run-<command>.json`` next to its outputs holding the
resolved settings, the seed and the SHA-256 of every input file. Errors are
printed to stderr as one JSON object ``{"error": code, "message": ...}``
with exit code 2 (input), 3 (data contract) or 4 (internal).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, formats
from .captions import CaptionTemplateSet, generate_caption
from .clustering import OpticsParams
from .errors import ConfigError, FormatError, GeocellKitError, UnresolvedInput
from .evaluate import RADII_KM, evaluate
from .geocell import (
    BuilderConfig,
    GeocellSet,
    assign_cells,
    build_naive_geocells,
    build_semantic_geocells,
    resolve_admin2,
)
from .labels import TAU_PIGEON, TAU_PIGEOTTO, smooth_label_matrix
from .refine import (
    PIGEON_CLUSTER_OPTICS,
    PIGEON_REFINE,
    PIGEOTTO_CLUSTER_OPTICS,
    PIGEOTTO_REFINE,
    ClusterIndex,
    PredictionRecord,
    RefineParams,
    build_cluster_index,
    load_index,
    refine_topk,
    save_index,
)

log = logging.getLogger("geocell_kit")

PRESETS: dict[str, dict[str, Any]] = {
    "pigeon": {
        "tau": TAU_PIGEON,
        "top_k": PIGEON_REFINE.top_k,
        "softmax_temperature": PIGEON_REFINE.softmax_temperature,
        "max_refine_distance_km": PIGEON_REFINE.max_refine_distance_km,
        "index_min_samples": PIGEON_CLUSTER_OPTICS.min_samples,
        "index_xi": PIGEON_CLUSTER_OPTICS.xi,
    },
    "pigeotto": {
        "tau": TAU_PIGEOTTO,
        "top_k": PIGEOTTO_REFINE.top_k,
        "softmax_temperature": PIGEOTTO_REFINE.softmax_temperature,
        "max_refine_distance_km": PIGEOTTO_REFINE.max_refine_distance_km,
        "index_min_samples": PIGEOTTO_CLUSTER_OPTICS.min_samples,
        "index_xi": PIGEOTTO_CLUSTER_OPTICS.xi,
    },
}

BASE_DEFAULTS: dict[str, Any] = {
    "preset": "pigeon",
    "seed": 0,
    "output_dir": ".",
    "naive": False,
    "min_cell_size": BuilderConfig.min_cell_size,
    "max_cell_size": BuilderConfig.max_cell_size,
    "optics_rounds": [p.to_dict() for p in BuilderConfig().optics_rounds],
    "centroid_mode": BuilderConfig.centroid_mode,
    "normalize_labels": False,
    "per_sample": False,
    "singletons": False,
    "csv": False,
    "addr": "127.0.0.1:8080",
}

PATH_KEYS = ("samples", "admins", "embeddings", "embedding_ids", "cells", "index",
             "predictions", "queries", "pairs", "templates", "output_dir")

REFINE_HEADER = ["id", "lat", "lon", "cluster_id", "score", "sample_id", "fallback"]


@dataclass
class PipelineConfig:
    """Resolved settings for one command invocation."""

    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values.get(key)

    @property
    def out(self) -> Path:
        return Path(self.values["output_dir"])

    def builder(self) -> BuilderConfig:
        rounds = tuple(OpticsParams.from_dict(r) for r in self.values["optics_rounds"])
        return BuilderConfig(min_cell_size=int(self.values["min_cell_size"]), optics_rounds=rounds,
                             max_cell_size=int(self.values["max_cell_size"]),
                             centroid_mode=self.values["centroid_mode"])

    def refine_params(self) -> RefineParams:
        return RefineParams(top_k=int(self.values["top_k"]),
                            softmax_temperature=float(self.values["softmax_temperature"]),
                            max_refine_distance_km=self.values["max_refine_distance_km"],
                            per_sample=bool(self.values["per_sample"]))

    def index_optics(self) -> OpticsParams | None:
        if self.values["singletons"]:
            return None
        return OpticsParams(int(self.values["index_min_samples"]), float(self.values["index_xi"]))

    def require(self, *keys: str) -> None:
        for k in keys:
            if self.values.get(k) is None:
                raise ConfigError(f"missing required setting {k!r} (flag --{k.replace('_', '-')})")
            if k in PATH_KEYS and k != "output_dir" and not Path(self.values[k]).exists():
                raise UnresolvedInput(f"{k} path not found: {self.values[k]}")


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    file_values: dict[str, Any] = {}
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UnresolvedInput(f"config file not found: {cfg_path}")
        try:
            file_values = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: invalid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError(f"{cfg_path}: config must be a JSON object")
        # nested sections are accepted and flattened
        for section in ("builder", "refine"):
            file_values.update(file_values.pop(section, {}) or {})
        # relative paths are relative to the config file
        for k in PATH_KEYS:
            if isinstance(file_values.get(k), str):
                file_values[k] = str((cfg_path.parent / file_values[k]))
    flag_values = {k: v for k, v in vars(args).items()
                   if v is not None and k not in ("config", "command", "func", "verbose")}
    preset = flag_values.get("preset") or file_values.get("preset") or BASE_DEFAULTS["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = {**BASE_DEFAULTS, **PRESETS[preset], **file_values, **flag_values}
    values["preset"] = preset
    if isinstance(values.get("max_refine_distance_km"), str):
        values["max_refine_distance_km"] = _parse_distance(values["max_refine_distance_km"])
    return PipelineConfig(values)


def _parse_distance(text: str) -> float | None:
    if text.lower() in ("none", "off", "inf"):
        return None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"max distance must be a number or 'none', got {text!r}") from None


def _parse_round(text: str) -> dict:
    ms, sep, xi = text.partition(":")
    if sep:
        try:
            return OpticsParams(int(ms), float(xi)).to_dict()
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"expected MIN_SAMPLES:XI, got {text!r}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: PipelineConfig, command: str, inputs: dict[str, Any],
                   outputs: Sequence[str]) -> Path:
    """Run manifest; paths are recorded by file name so reruns elsewhere match."""
    snapshot = {k: v for k, v in sorted(cfg.values.items()) if k not in PATH_KEYS}
    manifest = {
        "tool": "geocell-kit",
        "version": __version__,
        "command": command,
        "seed": cfg["seed"],
        "config": snapshot,
        "inputs": {k: {"file": Path(p).name, "sha256": sha256_file(p)}
                   for k, p in sorted(inputs.items()) if p is not None and Path(p).is_file()},
        "outputs": sorted(outputs),
    }
    path = cfg.out / f"run-{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _cells_paths(cfg: PipelineConfig) -> tuple[Path, Path]:
    base = Path(cfg["cells"]) if cfg["cells"] is not None else cfg.out
    geo, assign = base / "geocells.geojson", base / "assignments.csv"
    if not geo.exists():
        raise UnresolvedInput(f"geocell file not found: {geo}; run 'build' first")
    return geo, assign


# -- commands ----------------------------------------------------------------


def cmd_build(cfg: PipelineConfig) -> GeocellSet:
    cfg.require("samples")
    if not cfg["naive"]:
        cfg.require("admins")
    samples = formats.read_samples_csv(cfg["samples"])
    builder = cfg.builder()
    if cfg["naive"]:
        cells = build_naive_geocells(samples, builder)
    else:
        admins = formats.read_admins_geojson(cfg["admins"])
        cells = build_semantic_geocells(samples, admins, builder)
    cfg.out.mkdir(parents=True, exist_ok=True)
    formats.write_geocells(cells, cfg.out / "geocells.geojson", cfg.out / "assignments.csv")
    write_manifest(cfg, "build", {"samples": cfg["samples"], "admins": None if cfg["naive"]
                                  else cfg["admins"]},
                   ["geocells.geojson", "assignments.csv"])
    log.info("built %d geocells", len(cells))
    return cells


def _true_cells(samples, cells: GeocellSet, assign_path: Path) -> list[int]:
    known = formats.read_assignments(assign_path) if assign_path.exists() else {}
    out = [known.get(s.id) for s in samples]
    todo = [i for i, c in enumerate(out) if c is None]
    if todo:
        lat = np.array([samples[i].location.lat for i in todo])
        lon = np.array([samples[i].location.lon for i in todo])
        ids, _ = assign_cells(lat, lon, cells)
        for i, c in zip(todo, ids):
            out[i] = int(c)
    return out


def cmd_labels(cfg: PipelineConfig) -> np.ndarray:
    cfg.require("samples")
    geo, assign = _cells_paths(cfg)
    cells = formats.read_geocells(geo, assign if assign.exists() else None)
    samples = formats.read_samples_csv(cfg["samples"])
    if cfg["admins"] is not None:
        cfg.require("admins")
        samples = resolve_admin2(samples, formats.read_admins_geojson(cfg["admins"]))
    tau = float(cfg["tau"])
    y = smooth_label_matrix(samples, _true_cells(samples, cells, assign), cells, tau,
                            normalize=bool(cfg["normalize_labels"]))
    templates = CaptionTemplateSet()
    if cfg["templates"] is not None:
        cfg.require("templates")
        raw = json.loads(Path(cfg["templates"]).read_text(encoding="utf-8"))
        try:
            templates = CaptionTemplateSet({k: tuple(v) for k, v in raw.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    seed = int(cfg["seed"])
    captions = [generate_caption(s, templates, seed=seed) for s in samples]

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    ids = [s.id for s in samples]
    formats.write_labels(out / "labels.smlb", out / "labels.ids", ids, y)
    (out / "cell_order.txt").write_text("".join(f"{c.cell_id}\n" for c in cells), encoding="utf-8")
    (out / "captions.txt").write_text("".join(c.replace("\n", " ") + "\n" for c in captions),
                                      encoding="utf-8")
    formats.write_ids(out / "captions.ids", ids)
    write_manifest(cfg, "labels", {"samples": cfg["samples"], "admins": cfg["admins"],
                                   "geocells": geo, "assignments": assign,
                                   "templates": cfg["templates"]},
                   ["labels.smlb", "labels.ids", "cell_order.txt", "captions.txt", "captions.ids"])
    return y


def cmd_index(cfg: PipelineConfig) -> ClusterIndex:
    cfg.require("samples", "embeddings")
    geo, assign = _cells_paths(cfg)
    cells = formats.read_geocells(geo, assign)
    samples = formats.read_samples_csv(cfg["samples"])
    ids_path = cfg["embedding_ids"] or str(Path(cfg["embeddings"]).with_suffix(".ids"))
    ids, emb = formats.read_embeddings(cfg["embeddings"], ids_path)
    index = build_cluster_index(cells, samples, (ids, emb), cfg.index_optics())
    dest = Path(cfg["index"]) if cfg["index"] is not None else cfg.out / "index"
    save_index(index, dest)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, "index", {"samples": cfg["samples"], "embeddings": cfg["embeddings"],
                                  "embedding_ids": ids_path, "geocells": geo,
                                  "assignments": assign}, [dest.name])
    log.info("indexed %d clusters over %d cells", index.cluster_count, len(cells))
    return index


def refine_row(query_id: str, rec: PredictionRecord) -> list[str]:
    """One output row; the service formats its answers the same way."""
    return [query_id, repr(rec.location.lat), repr(rec.location.lon), str(rec.cluster_id),
            repr(rec.score), rec.sample_id, "1" if rec.fallback else "0"]


def _index_dir(cfg: PipelineConfig) -> Path:
    d = Path(cfg["index"]) if cfg["index"] is not None else cfg.out / "index"
    if not (d / "manifest.json").exists():
        raise UnresolvedInput(f"cluster index not found in {d}; run 'index' first")
    return d


def cmd_refine(cfg: PipelineConfig) -> list[list[str]]:
    cfg.require("predictions", "queries")
    index = load_index(_index_dir(cfg))
    params = cfg.refine_params()
    preds = formats.read_predictions(cfg["predictions"])
    _, queries = formats.read_embeddings(cfg["queries"])
    rows = []
    for p in preds:
        r = p["embedding_row"]
        if not 0 <= r < len(queries):
            raise FormatError(f"prediction {p['id']}: embedding_row {r} outside query file")
        rec = refine_topk(PredictionRecord(query=queries[r].astype(np.float64),
                                           topk=tuple(p["topk"])), index, params)
        rows.append(refine_row(p["id"], rec))
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "refined.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REFINE_HEADER)
        w.writerows(rows)
    idx = _index_dir(cfg)
    write_manifest(cfg, "refine", {"predictions": cfg["predictions"], "queries": cfg["queries"],
                                   "index_manifest": idx / "manifest.json",
                                   "index_means": idx / "means.embd"}, ["refined.csv"])
    return rows


def cmd_eval(cfg: PipelineConfig) -> dict:
    cfg.require("pairs")
    report = evaluate(formats.read_eval_pairs(cfg["pairs"]), radii=RADII_KM)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg["csv"]:
        with open(cfg.out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(report.csv_header())
            w.writerow(report.csv_row())
        name = "metrics.csv"
    else:
        (cfg.out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n",
                                              encoding="utf-8")
        name = "metrics.json"
    write_manifest(cfg, "eval", {"pairs": cfg["pairs"]}, [name])
    print(json.dumps(report.to_dict()))
    return report.to_dict()


def cmd_serve(cfg: PipelineConfig) -> None:
    from .service import RefineService, make_server, parse_addr

    idx = _index_dir(cfg)
    try:
        host, port = parse_addr(cfg["addr"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    service = RefineService(cfg.refine_params())
    server = make_server(service, host, port)
    service.load_async(lambda: load_index(idx))
    log.warning("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# -- argument parsing --------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON settings file; flags override its values")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="default family for tau, refinement and index clustering (default pigeon)")
    p.add_argument("--seed", type=int, help="seed recorded in outputs and used for captions (default 0)")
    p.add_argument("--out", dest="output_dir", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _refine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--index", help="cluster index directory (default OUT/index)")
    p.add_argument("--top-k", dest="top_k", type=int,
                   help="candidate cells considered (default 5 pigeon, 40 pigeotto)")
    p.add_argument("--temperature", dest="softmax_temperature", type=float,
                   help="distance softmax temperature (default 1.6 pigeon, 0.6 pigeotto)")
    p.add_argument("--max-distance", dest="max_refine_distance_km",
                   help="drop candidates farther than this many km from the top cell; "
                        "'none' disables (default 1000 pigeon, none pigeotto)")
    p.add_argument("--per-sample", dest="per_sample", action="store_true", default=None,
                   help="score cells by their nearest sample instead of nearest cluster mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geocell-kit",
        description="Semantic geocells, smoothed labels, cluster retrieval and metrics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build geocells from samples and admin boundaries")
    _common(p)
    p.add_argument("--samples", help="sample CSV (id,lat,lon,...)")
    p.add_argument("--admins", help="admin2 boundary GeoJSON")
    p.add_argument("--naive", action="store_true", default=None,
                   help="balanced rectangular split instead of admin-based cells")
    p.add_argument("--min-cell-size", dest="min_cell_size", type=int,
                   help="minimum samples per cell (default 30)")
    p.add_argument("--max-cell-size", dest="max_cell_size", type=int,
                   help="maximum samples per cell for --naive (default 200)")
    p.add_argument("--optics-round", dest="optics_rounds", action="append", type=_parse_round,
                   metavar="MIN_SAMPLES:XI",
                   help="OPTICS split round, repeatable (default 3:0.15)")
    p.add_argument("--centroid-mode", dest="centroid_mode", choices=("polygon", "samples"),
                   help="cell centroid from polygon area or member mean (default polygon)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("labels", help="export smoothed labels and captions")
    _common(p)
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--cells", help="directory with geocells.geojson and assignments.csv (default OUT)")
    p.add_argument("--admins", help="admin GeoJSON used to fill region and country names")
    p.add_argument("--tau", type=float,
                   help="smoothing temperature in km (default 75 pigeon, 65 pigeotto)")
    p.add_argument("--normalize", dest="normalize_labels", action="store_true", default=None,
                   help="divide each label row by its sum (default off)")
    p.add_argument("--templates", help="caption template JSON {category: [template, ...]}")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("index", help="cluster training samples per cell for retrieval")
    _common(p)
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--cells", help="directory with geocells.geojson and assignments.csv (default OUT)")
    p.add_argument("--embeddings", help="EMBD embedding matrix for training samples")
    p.add_argument("--embedding-ids", dest="embedding_ids",
                   help="sample id per embedding row (default EMBEDDINGS with .ids suffix)")
    p.add_argument("--index", help="index output directory (default OUT/index)")
    p.add_argument("--min-samples", dest="index_min_samples", type=int,
                   help="OPTICS min_samples for location clusters (default 3 pigeon, 10 pigeotto)")
    p.add_argument("--xi", dest="index_xi", type=float,
                   help="OPTICS xi for location clusters (default 0.15 pigeon, 0.1 pigeotto)")
    p.add_argument("--singletons", action="store_true", default=None,
                   help="one cluster per sample instead of OPTICS clusters")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("refine", help="refine top-K cell predictions to coordinates")
    _common(p)
    p.add_argument("--predictions", help="CSV id,embedding_row,topk with topk 'cell:prob ...'")
    p.add_argument("--queries", help="EMBD matrix of query embeddings")
    _refine_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="distance metrics for predicted vs true coordinates")
    _common(p)
    p.add_argument("--pairs", help="CSV id,pred_lat,pred_lon,true_lat,true_lon[,pred_iso,true_iso]")
    p.add_argument("--csv", action="store_true", default=None, help="write metrics.csv instead of JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP refinement service over a cluster index")
    _common(p)
    _refine_flags(p)
    p.add_argument("--addr", help="host:port to bind (default 127.0.0.1:8080)")
    p.set_defaults(func=cmd_serve)
    return parser


def _emit_error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        args.func(cfg)
    except GeocellKitError as exc:
        _emit_error(exc.code, str(exc))
        return exc.exit_code
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        _emit_error("InputError", f"{type(exc).__name__}: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001
        _emit_error("InternalError", f"{type(exc).__name__}: {exc}")
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
