"""HTTP inference endpoint for one (possibly composed) service.

Endpoints:

    GET  /healthz            -> 200, body "ok"
    GET  /v1/manifest        -> the service's canonical manifest bytes
    POST /v1/infer[?profile=1]

The infer request body is ``{"inputs": [{"name", "dtype", "shape",
"data"}]}`` where ``data`` is base64 of the raw little-endian payload; the
response mirrors the encoding for outputs and adds ``latency_us``.  With
``?profile=1`` a leaf service also returns per-node ``profile`` rows.

Malformed bodies get 400 with the failing field, signature violations get
422 with a port/dim diagnostic, anything unexpected is 500.  Weights load
once at startup and are shared read-only across request threads; every
request owns its intermediate buffers, so concurrent identical requests
produce identical payloads.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .compose import ServiceManifest, run_service, serialize_manifest, split_ref, validate_inputs
from .errors import StartupError, ZooError
from .graph import Graph
from .registry import LocalStore
from .tensor import DTYPES, Tensor


class _BadRequest(Exception):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def decode_tensor(entry: dict, path: str) -> tuple[str, Tensor]:
    """Decode one request tensor; raises _BadRequest with the failing field."""
    if not isinstance(entry, dict):
        raise _BadRequest("tensor entry must be an object", path)
    for key, kind in (("name", str), ("dtype", str), ("shape", list), ("data", str)):
        if key not in entry:
            raise _BadRequest(f"missing field {key!r}", f"{path}.{key}")
        if not isinstance(entry[key], kind):
            raise _BadRequest(f"field {key!r} has wrong type", f"{path}.{key}")
    dtype = entry["dtype"]
    if dtype not in DTYPES:
        raise _BadRequest(f"dtype {dtype!r} must be f32 or f64", f"{path}.dtype")
    shape = entry["shape"]
    size = 1
    for i, d in enumerate(shape):
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise _BadRequest(f"dim {d!r} must be a positive integer", f"{path}.shape[{i}]")
        size *= d
    try:
        payload = base64.b64decode(entry["data"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _BadRequest(f"data is not valid base64: {exc}", f"{path}.data")
    itemsize = 4 if dtype == "f32" else 8
    if len(payload) != size * itemsize:
        raise _BadRequest(
            f"payload is {len(payload)} bytes, expected {size * itemsize} "
            f"({itemsize} * product{tuple(shape)})", f"{path}.data")
    arr = np.frombuffer(payload, dtype="<f4" if dtype == "f32" else "<f8")
    try:
        tensor = Tensor(arr.astype(arr.dtype.newbyteorder("=")).reshape(shape))
    except ZooError as exc:
        raise _BadRequest(str(exc), f"{path}.shape")
    return entry["name"], tensor


def encode_tensor(name: str, t: Tensor) -> dict:
    return {
        "name": name,
        "dtype": t.dtype,
        "shape": list(t.shape),
        "data": base64.b64encode(t.tobytes()).decode("ascii"),
    }


class ServiceServer:
    """Loads a service once and serves it until shutdown.

    ``profile_default`` turns on per-node profiling for every request, as
    if each carried ``?profile=1``.
    """

    def __init__(self, manifest: ServiceManifest, store: LocalStore | None,
                 profile_default: bool = False):
        self.manifest = manifest
        self.store = store
        self.profile_default = profile_default
        self.graph_cache: dict[tuple[str, str], Graph] = {}
        self._preload(manifest)
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def _preload(self, manifest: ServiceManifest) -> None:
        from .compose import load_leaf  # deferred to keep import graph simple

        if manifest.is_pipeline:
            if self.store is None:
                raise StartupError("composed services need a local store to load from")
            for ref in manifest.pipeline:
                name, version = split_ref(ref)
                self._preload(self.store.load_manifest(name, version))
            return
        key = (manifest.name, manifest.version)
        if key in self.graph_cache:
            return
        if self.store is None:
            raise StartupError("no store to load the service from")
        service_dir = self.store.service_dir(*key)
        self.graph_cache[key] = load_leaf(manifest, service_dir)

    def infer(self, inputs: dict[str, Tensor], profile: bool):
        t0 = time.perf_counter_ns()
        outputs, reports = run_service(self.manifest, inputs, self.store,
                                       profile=profile, graph_cache=self.graph_cache)
        latency_us = (time.perf_counter_ns() - t0) // 1000
        return outputs, reports, latency_us

    # -- lifecycle ----------------------------------------------------------

    def start(self, port: int, host: str = "127.0.0.1") -> int:
        handler = _make_handler(self)
        try:
            self._httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise StartupError(f"cannot bind {host}:{port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self._httpd.server_address[1]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(manifest: ServiceManifest, store: LocalStore | None, port: int,
          profile_default: bool = False) -> ServiceServer:
    """Load the service and start answering on ``port`` (0 picks a free one)."""
    server = ServiceServer(manifest, store, profile_default=profile_default)
    server.start(port)
    return server


def _make_handler(server: ServiceServer):
    manifest_bytes = serialize_manifest(server.manifest).encode("utf-8")

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, doc: dict) -> None:
            self._send(status, json.dumps(doc).encode("utf-8"), "application/json")

        def do_GET(self):
            path = urlparse(self.path).path
            if path == "/healthz":
                self._send(200, b"ok", "text/plain")
            elif path == "/v1/manifest":
                self._send(200, manifest_bytes, "application/json")
            else:
                self._send_json(404, {"error": f"unknown path {path}"})

        def do_POST(self):
            parsed = urlparse(self.path)
            if parsed.path != "/v1/infer":
                self._send_json(404, {"error": f"unknown path {parsed.path}"})
                return
            profile = (parse_qs(parsed.query).get("profile", ["0"])[0] == "1"
                       or server.profile_default)
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                doc = json.loads(raw)
                if not isinstance(doc, dict):
                    raise _BadRequest("request body must be a JSON object", "")
                entries = doc.get("inputs")
                if not isinstance(entries, list):
                    raise _BadRequest("missing or non-list field 'inputs'", "inputs")
                tensors: dict[str, Tensor] = {}
                for i, entry in enumerate(entries):
                    name, tensor = decode_tensor(entry, f"inputs[{i}]")
                    if name in tensors:
                        raise _BadRequest(f"duplicate tensor name {name!r}",
                                          f"inputs[{i}].name")
                    tensors[name] = tensor
            except json.JSONDecodeError as exc:
                self._send_json(400, {"error": f"body is not valid JSON: {exc}", "field": ""})
                return
            except _BadRequest as exc:
                self._send_json(400, {"error": str(exc), "field": exc.field})
                return

            try:
                validate_inputs(server.manifest.inputs, tensors)
            except ZooError as exc:
                self._send_json(422, {"error": str(exc)})
                return

            try:
                outputs, reports, latency_us = server.infer(tensors, profile)
            except ZooError as exc:
                self._send_json(500, {"error": str(exc)})
                return

            doc = {
                "outputs": [encode_tensor(p.name, outputs[p.name])
                            for p in server.manifest.outputs.ports],
                "latency_us": latency_us,
            }
            if profile and not server.manifest.is_pipeline and reports:
                doc["profile"] = [
                    {"node_id": r.node_id, "name": r.name, "op": r.op,
                     "latency_us": r.latency_us,
                     "output_shape": "x".join(str(d) for d in r.output_shape)}
                    for r in reports[0].records
                ]
            self._send_json(200, doc)

    return Handler
