"""Shared fixtures: an HTTP registry fixture, tiny service factories, and a
random small-graph generator used by the executor/oracle tests."""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from modelzoo.builders import GraphBuilder, random_init
from modelzoo.compose import Port, TypeSignature
from modelzoo.graph import Graph
from modelzoo.registry import LocalStore, export_service
from modelzoo.tensor import Tensor

FIXED_CREATED = "2024-01-01T00:00:00Z"


# ---------------------------------------------------------------------------
# HTTP registry fixture: a bare file server with a request log


class _RegistryState:
    def __init__(self, root: Path):
        self.root = root
        self.log: list[tuple[str, str]] = []
        self.url = ""


def _registry_handler(state: _RegistryState):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _target(self) -> Path:
            return state.root / self.path.lstrip("/")

        def do_GET(self):
            state.log.append(("GET", self.path))
            target = self._target()
            if not target.is_file():
                self.send_response(404)
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_PUT(self):
            state.log.append(("PUT", self.path))
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            target = self._target()
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(body)
            self.send_response(201)
            self.send_header("Content-Length", "0")
            self.end_headers()

    return Handler


@pytest.fixture
def http_registry(tmp_path):
    """A live HTTP file registry; yields state with .url, .root and .log."""
    state = _RegistryState(tmp_path / "registry-root")
    state.root.mkdir()
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), _registry_handler(state))
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield state
    httpd.shutdown()
    httpd.server_close()
    thread.join(timeout=5)


# ---------------------------------------------------------------------------
# Tiny services


def make_dense_service(store_root, name, version, d_in, d_out, seed=0,
                       tag_in="vector", tag_out="vector"):
    """Install a one-dense-layer leaf service into a store; returns its manifest."""
    b = GraphBuilder()
    x = b.input("x", (d_in,))
    x = b.dense(x, d_out)
    graph = b.finish([x])
    params = random_init(graph, seed)
    inputs = TypeSignature((Port("x", "f32", (-1, d_in), tag_in),))
    outputs = TypeSignature((Port("y", "f32", (-1, d_out), tag_out),))
    return export_service(graph, params, Path(store_root) / name / version,
                          name=name, version=version, authors=("tester",),
                          inputs=inputs, outputs=outputs, created=FIXED_CREATED)


@pytest.fixture
def store(tmp_path):
    root = tmp_path / "store"
    root.mkdir()
    return LocalStore(root)


# ---------------------------------------------------------------------------
# Random small graphs exercising every op kind


def random_graph(rng: np.random.Generator) -> tuple[Graph, Tensor]:
    """A small random valid graph plus a matching input tensor.

    Starts from a random NCHW input, applies a few random conv/pool/act/bn
    layers, sometimes splits into two stride-preserving branches merged by
    concat, and ends with flatten + dense (+ softmax).
    """
    b = GraphBuilder()
    channels = int(rng.integers(1, 4))
    size = int(rng.integers(5, 10))
    x = b.input("x", (channels, size, size))
    depth = int(rng.integers(1, 4))
    for _ in range(depth):
        shape = b.shape(x)
        kind = rng.choice(["conv", "pool", "act", "bn", "branch"])
        if kind == "conv":
            k = int(rng.integers(1, min(4, shape[2] + 1)))
            stride = int(rng.integers(1, 3))
            x = b.conv(x, int(rng.integers(1, 5)), k, stride=stride,
                       padding=str(rng.choice(["same", "valid"])),
                       activation=[None, "relu", "tanh"][int(rng.integers(0, 3))])
        elif kind == "pool" and shape[2] >= 2 and shape[3] >= 2:
            x = b.pool(x, str(rng.choice(["max", "avg"])), 2,
                       stride=int(rng.integers(1, 3)),
                       padding=str(rng.choice(["same", "valid"])))
        elif kind == "act":
            x = b.act(x, str(rng.choice(["relu", "tanh"])))
        elif kind == "bn":
            x = b.bn(x)
        elif kind == "branch":
            left = b.conv(x, int(rng.integers(1, 4)), 1)
            right = b.conv(x, int(rng.integers(1, 4)), 3, padding="same")
            if rng.integers(0, 2):
                right = b.act(right, "relu")
            x = b.concat([left, right])
    x = b.flatten(x)
    x = b.dense(x, int(rng.integers(2, 6)))
    if rng.integers(0, 2):
        x = b.act(x, "softmax")
    graph = b.finish([x])
    graph.params = random_init(graph, int(rng.integers(0, 2**31)))
    batch = int(rng.integers(1, 3))
    data = rng.standard_normal((batch, channels, size, size)).astype(np.float32)
    return graph, Tensor(data)


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Largest elementwise deviation relative to the reference's magnitude."""
    scale = max(float(np.max(np.abs(b))), 1e-30)
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))) / scale
