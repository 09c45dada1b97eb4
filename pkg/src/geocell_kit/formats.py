"""File formats: sample CSV, admin/geocell GeoJSON, binary matrices, predictions.

Binary matrices (smoothed labels ``SMLB``, embeddings ``EMBD``) share one
layout: 4-byte magic, little-endian u32 row count, u32 column count, then
row-major little-endian float32 values. Each has a sidecar text file with
one sample id per row.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, UnresolvedInput
from .geo import GeoPoint
from .geocell import AUX_FIELDS, AdminUnit, BuilderConfig, Geocell, GeocellSet, Sample
from .shapes import geometry_from_geojson, geometry_to_geojson

SMLB_MAGIC = b"SMLB"
EMBD_MAGIC = b"EMBD"
_HEADER = struct.Struct("<4sII")

_INT_FIELDS = {"month"}
_STR_FIELDS = {"climate", "drive_side", "region", "country_name", "country", "admin1", "admin2"}


def _open_existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UnresolvedInput(f"input file not found: {p}")
    return p


# -- samples -----------------------------------------------------------------


def read_samples_csv(path) -> list[Sample]:
    """Read ``id,lat,lon[,aux...]``; unknown extra columns are ignored."""
    p = _open_existing(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"id", "lat", "lon"} <= set(reader.fieldnames):
            raise FormatError(f"{p}: header must start with id,lat,lon")
        samples = []
        for row in reader:
            kw = {}
            for name in AUX_FIELDS + ("country", "admin1", "admin2"):
                raw = row.get(name)
                if raw is None or raw == "":
                    continue
                if name in _INT_FIELDS:
                    kw[name] = int(raw)
                elif name in _STR_FIELDS:
                    kw[name] = raw
                else:
                    kw[name] = float(raw)
            try:
                loc = GeoPoint(float(row["lat"]), float(row["lon"]))
            except ValueError as exc:
                raise FormatError(f"{p}: bad coordinates for {row['id']}: {exc}") from None
            samples.append(Sample(id=row["id"], location=loc, **kw))
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{p}: duplicate sample ids")
    return samples


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_samples_csv(samples: Sequence[Sample], path) -> None:
    cols = ["id", "lat", "lon"] + [f for f in AUX_FIELDS if any(getattr(s, f) is not None
                                                                   for s in samples)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in samples:
            w.writerow([s.id, _fmt(s.location.lat), _fmt(s.location.lon)]
                       + [_fmt(getattr(s, c)) for c in cols[3:]])


# -- admin boundaries ------------------------------------------------------


def read_admins_geojson(path) -> list[AdminUnit]:
    p = _open_existing(path)
    data = json.loads(p.read_text(encoding="utf-8"))
    if data.get("type") != "FeatureCollection":
        raise FormatError(f"{p}: expected a FeatureCollection")
    units = []
    for feat in data["features"]:
        props = feat.get("properties") or {}
        try:
            units.append(AdminUnit(
                level=str(props.get("level", "admin2")),
                iso=str(props["iso"]),
                admin1_id=str(props.get("admin1_id", "")),
                admin2_id=str(props.get("admin2_id", "")),
                geometry=geometry_from_geojson(feat["geometry"]),
                admin1_name=props.get("admin1_name"),
                country_name=props.get("country_name"),
            ))
        except KeyError as exc:
            raise FormatError(f"{p}: feature missing {exc}") from None
    return units


def write_admins_geojson(units: Sequence[AdminUnit], path) -> None:
    feats = []
    for u in units:
        props = {"iso": u.iso, "admin1_id": u.admin1_id, "admin2_id": u.admin2_id, "level": u.level}
        if u.admin1_name is not None:
            props["admin1_name"] = u.admin1_name
        if u.country_name is not None:
            props["country_name"] = u.country_name
        feats.append({"type": "Feature", "properties": props,
                      "geometry": geometry_to_geojson(u.geometry)})
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": feats}) + "\n",
                          encoding="utf-8")


# -- geocells --------------------------------------------------------------


def geocells_to_geojson(cells: GeocellSet) -> dict:
    feats = []
    for c in cells:
        feats.append({
            "type": "Feature",
            "properties": {
                "cell_id": c.cell_id,
                "centroid_lat": c.centroid.lat,
                "centroid_lon": c.centroid.lon,
                "sample_count": c.sample_count,
                "country": c.country,
                "provenance": c.provenance,
                "remainder": c.remainder,
            },
            "geometry": geometry_to_geojson(c.geometry),
        })
    return {"type": "FeatureCollection", "builder_config": cells.config.to_dict(), "features": feats}


def write_geocells(cells: GeocellSet, geojson_path, assignment_path) -> None:
    Path(geojson_path).write_text(json.dumps(geocells_to_geojson(cells)) + "\n", encoding="utf-8")
    with open(assignment_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "cell_id"])
        for c in cells:
            for m in c.members:
                w.writerow([m, c.cell_id])


def read_geocells(geojson_path, assignment_path=None) -> GeocellSet:
    p = _open_existing(geojson_path)
    data = json.loads(p.read_text(encoding="utf-8"))
    members: dict[int, list[str]] = {}
    if assignment_path is not None:
        for sid, cid in read_assignments(assignment_path).items():
            members.setdefault(cid, []).append(sid)
    cells = []
    for feat in data["features"]:
        pr = feat["properties"]
        cid = int(pr["cell_id"])
        cells.append(Geocell(
            cell_id=cid,
            geometry=geometry_from_geojson(feat["geometry"]),
            centroid=GeoPoint(pr["centroid_lat"], pr["centroid_lon"]),
            members=tuple(members.get(cid, ())),
            country=pr.get("country", ""),
            provenance=pr.get("provenance", ""),
            remainder=bool(pr.get("remainder", False)),
        ))
    cfg = BuilderConfig.from_dict(data["builder_config"]) if "builder_config" in data else BuilderConfig()
    return GeocellSet(tuple(cells), cfg)


def read_assignments(path) -> dict[str, int]:
    p = _open_existing(path)
    with p.open(newline="", encoding="utf-8") as fh:
        return {row["sample_id"]: int(row["cell_id"]) for row in csv.DictReader(fh)}


# -- binary matrices ---------------------------------------------------------


def write_matrix(path, magic: bytes, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError("matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))


def read_matrix(path, magic: bytes) -> np.ndarray:
    raw = _open_existing(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, rows, cols = _HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise FormatError(f"{path}: expected {rows}x{cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()


def write_ids(path, ids: Iterable[str]) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_ids(path) -> list[str]:
    return _open_existing(path).read_text(encoding="utf-8").splitlines()


def write_embeddings(path, ids_path, ids: Sequence[str], matrix: np.ndarray) -> None:
    if len(ids) != len(matrix):
        raise FormatError("id count does not match embedding rows")
    write_matrix(path, EMBD_MAGIC, matrix)
    write_ids(ids_path, ids)


def read_embeddings(path, ids_path=None) -> tuple[list[str] | None, np.ndarray]:
    m = read_matrix(path, EMBD_MAGIC)
    ids = read_ids(ids_path) if ids_path is not None else None
    if ids is not None and len(ids) != len(m):
        raise FormatError(f"{ids_path}: {len(ids)} ids for {len(m)} embedding rows")
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{path}: embeddings must be finite")
    return ids, m


def write_labels(path, ids_path, ids: Sequence[str], matrix: np.ndarray) -> None:
    write_matrix(path, SMLB_MAGIC, matrix)
    write_ids(ids_path, ids)


def read_labels(path, ids_path=None):
    m = read_matrix(path, SMLB_MAGIC)
    return (read_ids(ids_path) if ids_path is not None else None), m


# -- predictions and evaluation pairs ----------------------------------------


def parse_topk(text: str) -> list[tuple[int, float]]:
    out = []
    for tok in text.split():
        cid, _, prob = tok.partition(":")
        if not _:
            raise FormatError(f"bad topk entry {tok!r}; expected cell_id:prob")
        out.append((int(cid), float(prob)))
    return out


def format_topk(topk: Sequence[tuple[int, float]]) -> str:
    return " ".join(f"{c}:{p!r}" for c, p in topk)


def read_predictions(path) -> list[dict]:
    """Rows of ``id,embedding_row,topk`` where topk is ``cell:prob`` pairs
    separated by spaces."""
    p = _open_existing(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "embedding_row", "topk"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise FormatError(f"{p}: header must contain id,embedding_row,topk")
        return [{"id": r["id"], "embedding_row": int(r["embedding_row"]),
                 "topk": parse_topk(r["topk"])} for r in reader]


def write_predictions(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "embedding_row", "topk"])
        for r in rows:
            w.writerow([r["id"], r["embedding_row"], format_topk(r["topk"])])


def read_eval_pairs(path):
    """``id,pred_lat,pred_lon,true_lat,true_lon[,pred_iso,true_iso]``."""
    from .evaluate import EvalPair

    p = _open_existing(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "pred_lat", "pred_lon", "true_lat", "true_lon"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise FormatError(f"{p}: header must contain {','.join(sorted(need))}")
        pairs = []
        for r in reader:
            pairs.append(EvalPair(
                prediction=GeoPoint(float(r["pred_lat"]), float(r["pred_lon"])),
                truth=GeoPoint(float(r["true_lat"]), float(r["true_lon"])),
                pred_iso=r.get("pred_iso") or None,
                true_iso=r.get("true_iso") or None,
            ))
    return pairs


def finite_or_none(x: float):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
