"""Small HTTP front end for top-K refinement over a loaded cluster index.

``POST /refine`` takes ``{"embedding": [...], "topk": [{"cell_id", "prob"}, ...]}``
and answers ``{"lat", "lon", "cluster_id", "sample_id", "score", "fallback"}``.
``GET /healthz`` answers 200 once the index is loaded and 503 before.
The index is immutable, so request threads share it without locking.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

import numpy as np

from .errors import GeocellKitError
from .refine import ClusterIndex, PredictionRecord, RefineParams, refine_topk

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


class BadRequest(Exception):
    pass


def parse_refine_request(body: bytes) -> PredictionRecord:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise BadRequest("request body must be a JSON object")
    emb = data.get("embedding")
    topk = data.get("topk")
    if not isinstance(emb, list) or not emb or not all(isinstance(v, (int, float)) for v in emb):
        raise BadRequest("'embedding' must be a non-empty list of numbers")
    if not isinstance(topk, list) or not topk:
        raise BadRequest("'topk' must be a non-empty list")
    pairs = []
    for item in topk:
        if not isinstance(item, dict) or "cell_id" not in item or "prob" not in item:
            raise BadRequest("each topk entry needs 'cell_id' and 'prob'")
        try:
            pairs.append((int(item["cell_id"]), float(item["prob"])))
        except (TypeError, ValueError):
            raise BadRequest("cell_id must be an integer and prob a number") from None
    return PredictionRecord(query=np.asarray(emb, dtype=np.float64), topk=tuple(pairs))


def refine_response(rec: PredictionRecord) -> dict:
    return {"lat": rec.location.lat, "lon": rec.location.lon, "cluster_id": rec.cluster_id,
            "sample_id": rec.sample_id, "score": rec.score, "fallback": rec.fallback}


class RefineService:
    """Holds the index once loaded; ``index`` is None while loading."""

    def __init__(self, params: RefineParams):
        self.params = params
        self.index: ClusterIndex | None = None
        self.ready = threading.Event()

    def load(self, loader: Callable[[], ClusterIndex]) -> None:
        self.index = loader()
        self.ready.set()

    def load_async(self, loader: Callable[[], ClusterIndex]) -> threading.Thread:
        t = threading.Thread(target=self.load, args=(loader,), daemon=True)
        t.start()
        return t

    def handle_refine(self, body: bytes) -> tuple[int, dict]:
        index = self.index
        if index is None:
            return 503, {"error": "IndexLoading", "message": "index not loaded yet"}
        try:
            rec = parse_refine_request(body)
            out = refine_topk(rec, index, self.params)
        except BadRequest as exc:
            return 400, {"error": "BadRequest", "message": str(exc)}
        except GeocellKitError as exc:
            return 400, {"error": exc.code, "message": str(exc)}
        return 200, refine_response(out)


def _handler_for(service: RefineService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, status: int, payload: dict) -> None:
            body = (json.dumps(payload) + "\n").encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/healthz":
                if service.index is None:
                    self._send(503, {"status": "loading"})
                else:
                    self._send(200, {"status": "ok"})
            else:
                self._send(404, {"error": "NotFound", "message": self.path})

        def do_POST(self):
            if self.path != "/refine":
                self._send(404, {"error": "NotFound", "message": self.path})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self._send(400, {"error": "BadRequest", "message": "bad Content-Length"})
                return
            status, payload = service.handle_refine(self.rfile.read(length))
            self._send(status, payload)

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(service: RefineService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _handler_for(service))
    server.daemon_threads = True
    return server


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--addr must be host:port, got {addr!r}")
    return host, int(port)
