"""HTTP inference service: trajectory in, top-k predictions and graph out.

Endpoints: ``POST /api/recognize``, ``GET /api/health``, and ``GET /`` for
the static UI bundle. The model is loaded once at startup and never mutated,
so requests can be handled concurrently.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .checkpoint import file_crc32
from .errors import DataError, SgcnError
from .graphs import batch_graphs, build_graph, to_undirected_self_loops
from .ink import as_trajectory, normalize, resample
from .training import checkpoint_load

MAX_PAYLOAD = 1 << 20  # 1 MB

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
}

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>sgcn</title></head>
<body><h1>sgcn recognition service</h1>
<p>No UI bundle configured. POST strokes to /api/recognize.</p></body></html>
"""


class RecognitionService:
    """Checkpoint-backed recognizer shared by all request threads."""

    def __init__(self, checkpoint_path):
        self.model, data = checkpoint_load(checkpoint_path)
        self.model.eval()
        meta = data.json_section("meta") or {}
        self.class_names = meta.get("class_names") or [
            str(i) for i in range(self.model.config.num_classes)
        ]
        self.checkpoint_id = file_crc32(checkpoint_path)

    @property
    def num_classes(self) -> int:
        return self.model.config.num_classes

    def recognize(self, payload: dict) -> dict:
        t0 = time.perf_counter()
        if not isinstance(payload, dict) or "strokes" not in payload:
            raise DataError("request body must be a JSON object with a 'strokes' field")
        traj = as_trajectory(payload["strokes"])
        topk = payload.get("topk", min(5, self.num_classes))
        if not isinstance(topk, int) or not 1 <= topk <= self.num_classes:
            raise DataError(f"topk must be an integer in [1, {self.num_classes}]")
        cfg = self.model.config
        prepared = resample(normalize(traj), cfg.interval)
        directed = build_graph(prepared, penup_edges=cfg.penup_edges)
        result = self.model.forward(batch_graphs([to_undirected_self_loops(directed)]))
        logits = result.logits.data[0].astype(np.float64)
        z = np.exp(logits - logits.max())
        scores = z / z.sum()
        ranked = np.argsort(-logits, kind="stable")[:topk]
        return {
            "predictions": [
                {"label": self.class_names[i], "score": float(scores[i])} for i in ranked
            ],
            "graph": {
                "nodes": directed.coords.data.astype(np.float64).tolist(),
                "edges": directed.edges.tolist(),
            },
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        }

    def health(self) -> dict:
        return {"status": "ok", "checkpoint_id": self.checkpoint_id,
                "num_classes": self.num_classes}


def _make_handler(service: RecognitionService, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, body: bytes, content_type="application/json"):
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, code: int, obj):
            self._send(code, json.dumps(obj).encode("utf-8"))

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/health":
                self._send_json(200, service.health())
                return
            self._serve_static()

        def do_POST(self):
            if self.path != "/api/recognize":
                self._send_json(404, {"error": "unknown endpoint"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_PAYLOAD:
                self.close_connection = True  # request body is left unread
                self._send_json(413, {"error": "payload too large"})
                return
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw)
            except json.JSONDecodeError:
                self._send_json(400, {"error": "malformed JSON"})
                return
            try:
                self._send_json(200, service.recognize(payload))
            except (DataError, SgcnError) as e:
                self._send_json(400, {"error": str(e)})

        def _serve_static(self):
            name = self.path.split("?", 1)[0].lstrip("/") or "index.html"
            if ui_dir is None:
                if name == "index.html":
                    self._send(200, _FALLBACK_PAGE, "text/html; charset=utf-8")
                else:
                    self._send_json(404, {"error": "not found"})
                return
            target = (ui_dir / name).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self._send(200, target.read_bytes(), ctype)

    return Handler


def make_server(checkpoint_path, host="127.0.0.1", port=8080,
                ui_dir=None) -> ThreadingHTTPServer:
    service = RecognitionService(checkpoint_path)
    handler = _make_handler(service, Path(ui_dir) if ui_dir else None)
    return ThreadingHTTPServer((host, port), handler)


def serve(checkpoint_path, host="127.0.0.1", port=8080, ui_dir=None) -> None:
    httpd = make_server(checkpoint_path, host=host, port=port, ui_dir=ui_dir)
    print(f"serving on http://{host}:{httpd.server_address[1]}/", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()


def start_background(checkpoint_path, host="127.0.0.1", port=0, ui_dir=None):
    """Start a server thread (tests); returns (server, base_url)."""
    httpd = make_server(checkpoint_path, host=host, port=port, ui_dir=ui_dir)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return httpd, f"http://{host}:{httpd.server_address[1]}"
