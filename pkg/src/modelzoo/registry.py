"""Content-addressed local store and the pull/publish registry client.

The store layout is ``<root>/<name>/<version>/`` holding ``manifest.json``
plus, for leaf services, ``graph.json`` and ``weights.zoow``.  A registry
is any HTTP server (or plain directory) exposing the same files under
``{base}/services/{name}/{version}/{filename}``; ``file://`` endpoints and
bare directory paths work as degenerate registries for offline use.

Weights are content-addressed by SHA-256: pull verifies the downloaded
bytes against the manifest before anything becomes visible in the store,
and installs are atomic (write to a temp directory, then rename).
"""

from __future__ import annotations

import hashlib
import os
import shutil
import uuid
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlparse
from urllib.request import url2pathname

import requests

from .compose import (
    ServiceManifest,
    TypeSignature,
    parse_manifest,
    parse_version,
    serialize_manifest,
    split_ref,
    now_iso,
)
from .errors import IntegrityError, ManifestError, MissingServiceError, RegistryError
from .graph import Graph, graph_to_json
from .tensor import Tensor
from .weights import encode_weights

MANIFEST_FILE = "manifest.json"
GRAPH_FILE = "graph.json"
WEIGHTS_FILE = "weights.zoow"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class LocalStore:
    """Local service store rooted at a directory."""

    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def service_dir(self, name: str, version: str) -> Path:
        return self.root / name / version

    def has(self, name: str, version: str) -> bool:
        return (self.service_dir(name, version) / MANIFEST_FILE).is_file()

    def load_manifest(self, name: str, version: str) -> ServiceManifest:
        path = self.service_dir(name, version) / MANIFEST_FILE
        if not path.is_file():
            raise MissingServiceError(f"service {name}@{version} not found in {self.root}")
        return parse_manifest(path.read_text())

    def versions(self, name: str) -> list[str]:
        base = self.root / name
        if not base.is_dir():
            return []
        found = []
        for entry in sorted(base.iterdir()):
            if (entry / MANIFEST_FILE).is_file():
                try:
                    parse_version(entry.name)
                except ManifestError:
                    continue
                found.append(entry.name)
        return found

    def installed(self) -> list[tuple[str, str]]:
        if not self.root.is_dir():
            return []
        pairs = []
        for name_dir in sorted(self.root.iterdir()):
            if name_dir.name.startswith(".") or not name_dir.is_dir():
                continue
            for version in self.versions(name_dir.name):
                pairs.append((name_dir.name, version))
        return pairs


def resolve(name: str, version_req: str, store: LocalStore) -> ServiceManifest:
    """Resolve ``name`` at an exact ``x.y.z`` or the highest ``latest`` version."""
    if version_req == "latest":
        versions = store.versions(name)
        if not versions:
            raise MissingServiceError(f"no versions of {name!r} in {store.root}")
        best = max(versions, key=parse_version)
        return store.load_manifest(name, best)
    parse_version(version_req)
    return store.load_manifest(name, version_req)


def audit_store(store: LocalStore) -> list[str]:
    """Walk the store and report every integrity violation found."""
    problems = []
    for name, version in store.installed():
        sdir = store.service_dir(name, version)
        try:
            manifest = store.load_manifest(name, version)
        except ManifestError as exc:
            problems.append(f"{name}@{version}: bad manifest: {exc}")
            continue
        if manifest.is_pipeline:
            continue
        wpath = sdir / manifest.weights
        if not wpath.is_file():
            problems.append(f"{name}@{version}: missing weights file {manifest.weights}")
        elif sha256_hex(wpath.read_bytes()) != manifest.sha256:
            problems.append(f"{name}@{version}: weights hash mismatch")
        if not (sdir / manifest.graph).is_file():
            problems.append(f"{name}@{version}: missing graph file {manifest.graph}")
    return problems


def export_service(graph: Graph, params: dict[str, Tensor], out_dir: str | Path, *,
                   name: str, version: str, authors: tuple[str, ...],
                   inputs: TypeSignature, outputs: TypeSignature,
                   created: str | None = None) -> ServiceManifest:
    """Write a leaf service directory: manifest.json, graph.json, weights.zoow."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weight_bytes = encode_weights(params)
    manifest = ServiceManifest(
        name=name, version=version, authors=authors,
        inputs=inputs, outputs=outputs,
        graph=GRAPH_FILE, weights=WEIGHTS_FILE,
        sha256=sha256_hex(weight_bytes),
        created=created or now_iso(),
    )
    (out / GRAPH_FILE).write_text(graph_to_json(graph))
    (out / WEIGHTS_FILE).write_bytes(weight_bytes)
    (out / MANIFEST_FILE).write_text(serialize_manifest(manifest))
    return manifest


# ---------------------------------------------------------------------------
# Endpoint plumbing: http(s) via requests, file:// and bare paths directly


def _endpoint_root(endpoint: str) -> tuple[str, Path | str]:
    """Classify an endpoint: ('http', base_url) or ('file', root_path)."""
    parsed = urlparse(endpoint)
    if parsed.scheme in ("http", "https"):
        return "http", endpoint.rstrip("/")
    if parsed.scheme == "file":
        return "file", Path(url2pathname(parsed.path))
    if parsed.scheme == "":
        return "file", Path(endpoint)
    raise RegistryError(f"unsupported registry endpoint {endpoint!r}")


def _fetch(endpoint: str, relpath: str) -> bytes | None:
    """GET a registry file; None when the registry reports it missing."""
    kind, base = _endpoint_root(endpoint)
    if kind == "http":
        url = f"{base}/{relpath}"
        try:
            resp = requests.get(url, timeout=30)
        except requests.RequestException as exc:
            raise RegistryError(f"GET {url} failed: {exc}") from exc
        if resp.status_code == 404:
            return None
        if not resp.ok:
            raise RegistryError(f"GET {url} -> {resp.status_code}")
        return resp.content
    path = base / relpath
    if not path.is_file():
        return None
    return path.read_bytes()


def _put(endpoint: str, relpath: str, data: bytes) -> None:
    kind, base = _endpoint_root(endpoint)
    if kind == "http":
        url = f"{base}/{relpath}"
        try:
            resp = requests.put(url, data=data, timeout=60)
        except requests.RequestException as exc:
            raise RegistryError(f"PUT {url} failed: {exc}") from exc
        if not resp.ok:
            raise RegistryError(f"PUT {url} -> {resp.status_code}")
        return
    path = base / relpath
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


@dataclass(frozen=True)
class PublishReceipt:
    name: str
    version: str
    sha256: str | None


def validate_service_dir(service_dir: str | Path) -> ServiceManifest:
    """Validate a service directory before publishing; returns its manifest."""
    sdir = Path(service_dir)
    mpath = sdir / MANIFEST_FILE
    if not mpath.is_file():
        raise MissingServiceError(f"{sdir} has no {MANIFEST_FILE}")
    manifest = parse_manifest(mpath.read_text())
    if not manifest.is_pipeline:
        for ref in (manifest.graph, manifest.weights):
            if not (sdir / ref).is_file():
                raise MissingServiceError(f"{sdir} is missing {ref}")
        actual = sha256_hex((sdir / manifest.weights).read_bytes())
        if actual != manifest.sha256:
            raise IntegrityError(
                f"weights hash {actual[:12]}... does not match manifest "
                f"{manifest.sha256[:12]}... in {sdir}")
    return manifest


def publish(service_dir: str | Path, endpoint: str) -> PublishReceipt:
    """Upload a validated service directory to a registry.

    Validation happens before any network traffic; re-publishing identical
    bytes is idempotent.
    """
    sdir = Path(service_dir)
    manifest = validate_service_dir(sdir)
    rel = f"services/{manifest.name}/{manifest.version}"
    files = [MANIFEST_FILE]
    if not manifest.is_pipeline:
        files += [manifest.graph, manifest.weights]
    for fname in files:
        _put(endpoint, f"{rel}/{fname}", (sdir / fname).read_bytes())
    return PublishReceipt(manifest.name, manifest.version, manifest.sha256)


def pull(name: str, version: str, endpoint: str, store: LocalStore) -> Path:
    """Fetch a service (and, transitively, its pipeline members) into the store.

    Already-installed services with intact weights are cache hits and cause
    no registry traffic.  Downloads are verified against the manifest hash
    and installed atomically; a failed or interrupted pull leaves the store
    unchanged.
    """
    parse_version(version)
    final_dir = store.service_dir(name, version)
    if store.has(name, version):
        try:
            cached = store.load_manifest(name, version)
            if cached.is_pipeline:
                for ref in cached.pipeline:
                    pull(*split_ref(ref), endpoint=endpoint, store=store)
                return final_dir
            wpath = final_dir / cached.weights
            if wpath.is_file() and sha256_hex(wpath.read_bytes()) == cached.sha256:
                return final_dir
        except ManifestError:
            pass  # broken install: re-fetch and replace it

    rel = f"services/{name}/{version}"
    raw = _fetch(endpoint, f"{rel}/{MANIFEST_FILE}")
    if raw is None:
        raise MissingServiceError(f"service {name}@{version} not found at {endpoint}")
    manifest = parse_manifest(raw.decode("utf-8"))
    if manifest.name != name or manifest.version != version:
        raise RegistryError(
            f"registry returned manifest for {manifest.ref}, requested {name}@{version}")

    blobs: dict[str, bytes] = {MANIFEST_FILE: raw}
    if not manifest.is_pipeline:
        for fname in (manifest.graph, manifest.weights):
            data = _fetch(endpoint, f"{rel}/{fname}")
            if data is None:
                raise MissingServiceError(f"registry is missing {rel}/{fname}")
            blobs[fname] = data
        actual = sha256_hex(blobs[manifest.weights])
        if actual != manifest.sha256:
            raise IntegrityError(
                f"pulled weights hash {actual[:12]}... does not match manifest "
                f"{manifest.sha256[:12]}... for {name}@{version}")
    else:
        for ref in manifest.pipeline:
            pull(*split_ref(ref), endpoint=endpoint, store=store)

    store.root.mkdir(parents=True, exist_ok=True)
    tmp = store.root / f".tmp-{name}-{version}-{uuid.uuid4().hex[:8]}"
    tmp.mkdir(parents=True)
    try:
        for fname, data in blobs.items():
            (tmp / fname).write_bytes(data)
        final_dir.parent.mkdir(parents=True, exist_ok=True)
        try:
            os.rename(tmp, final_dir)
        except OSError:
            if store.has(name, version) and _install_intact(store, name, version):
                # concurrent pull installed intact content first; keep theirs
                shutil.rmtree(tmp, ignore_errors=True)
            else:
                # replace a broken install with the verified download
                stale = store.root / f".old-{name}-{version}-{uuid.uuid4().hex[:8]}"
                os.rename(final_dir, stale)
                os.rename(tmp, final_dir)
                shutil.rmtree(stale, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final_dir


def _install_intact(store: LocalStore, name: str, version: str) -> bool:
    """True when the installed service parses and its weights hash matches."""
    try:
        manifest = store.load_manifest(name, version)
    except ManifestError:
        return False
    if manifest.is_pipeline:
        return True
    wpath = store.service_dir(name, version) / manifest.weights
    return wpath.is_file() and sha256_hex(wpath.read_bytes()) == manifest.sha256
