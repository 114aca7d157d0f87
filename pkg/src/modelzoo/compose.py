"""Service manifests, typed signatures, compatibility checking, composition.

A service is either a leaf (graph + weights on disk, referenced from its
manifest together with the weights' SHA-256) or a pipeline of other
services referenced as ``name@version``.  Composition is positional: stage
``i``'s output ports feed stage ``i+1``'s input ports in order.

Two ports are compatible when their dtypes match, their semantic tags match
(``any`` matches everything), their ranks match, and every dimension pair
unifies (equal, or either side is the wildcard -1).

The manifest JSON encoding is canonical: fixed key order (name, version,
authors, inputs, outputs, graph, weights, sha256, pipeline, created), two
space indent, one trailing newline.  Equal manifests serialise to identical
bytes and serialise/parse round-trips are byte-exact.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import (
    CompositionError,
    ManifestError,
    MissingServiceError,
    ShapeError,
)
from .graph import Graph, ProfileReport, execute, graph_from_json
from .tensor import Tensor
from .weights import load_weights

if TYPE_CHECKING:  # pragma: no cover
    from .registry import LocalStore

_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")

MANIFEST_KEYS = ("name", "version", "authors", "inputs", "outputs",
                 "graph", "weights", "sha256", "pipeline", "created")


@dataclass(frozen=True)
class Port:
    """One typed tensor port: dtype, shape pattern (-1 wildcard), semantic tag."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    tag: str


@dataclass(frozen=True)
class TypeSignature:
    ports: tuple[Port, ...]

    def port_names(self) -> list[str]:
        return [p.name for p in self.ports]


@dataclass(frozen=True)
class Diagnostic:
    position: int       # port index; -1 for signature-level problems
    producer_port: str
    consumer_port: str
    field: str          # "ports", "dtype", "tag", "rank" or "dim <i>"
    reason: str


@dataclass(frozen=True)
class CompatReport:
    compatible: bool
    diagnostics: tuple[Diagnostic, ...]


@dataclass(frozen=True)
class ServiceManifest:
    name: str
    version: str
    authors: tuple[str, ...]
    inputs: TypeSignature
    outputs: TypeSignature
    graph: str | None = None
    weights: str | None = None
    sha256: str | None = None
    pipeline: tuple[str, ...] | None = None
    created: str = ""

    @property
    def is_pipeline(self) -> bool:
        return self.pipeline is not None

    @property
    def ref(self) -> str:
        return f"{self.name}@{self.version}"


def parse_version(version: str, field: str = "version") -> tuple[int, int, int]:
    parts = version.split(".")
    if len(parts) != 3 or not all(p.isdigit() and str(int(p)) == p for p in parts):
        raise ManifestError(f"version {version!r} is not MAJOR.MINOR.PATCH", field=field)
    return tuple(int(p) for p in parts)


def validate_manifest(m: ServiceManifest) -> None:
    parse_version(m.version)
    _validate_signature(m.inputs, "inputs")
    _validate_signature(m.outputs, "outputs")
    has_graph = m.graph is not None or m.weights is not None or m.sha256 is not None
    if m.is_pipeline and has_graph:
        raise ManifestError("manifest has both graph/weights and pipeline", field="pipeline")
    if not m.is_pipeline:
        if m.graph is None or m.weights is None or m.sha256 is None:
            raise ManifestError("leaf manifest needs graph, weights and sha256", field="graph")
        if not _SHA256_RE.match(m.sha256):
            raise ManifestError(f"sha256 {m.sha256!r} is not 64 lowercase hex chars",
                                field="sha256")
    else:
        if len(m.pipeline) < 1:
            raise ManifestError("pipeline must list at least one service", field="pipeline")
        for i, ref in enumerate(m.pipeline):
            split_ref(ref, field=f"pipeline[{i}]")
    if not m.name:
        raise ManifestError("name must be non-empty", field="name")
    if not m.created:
        raise ManifestError("created timestamp must be non-empty", field="created")


def _validate_signature(sig: TypeSignature, path: str) -> None:
    if not sig.ports:
        raise ManifestError(f"{path} must declare at least one port", field=path)
    seen = set()
    for i, p in enumerate(sig.ports):
        if not p.name or p.name in seen:
            raise ManifestError(f"duplicate or empty port name {p.name!r}",
                                field=f"{path}[{i}].name")
        seen.add(p.name)
        if p.dtype not in ("f32", "f64"):
            raise ManifestError(f"dtype {p.dtype!r} must be f32 or f64",
                                field=f"{path}[{i}].dtype")
        if not 1 <= len(p.shape) <= 4:
            raise ManifestError(f"shape rank {len(p.shape)} outside 1..4",
                                field=f"{path}[{i}].shape")
        for ax, d in enumerate(p.shape):
            if d != -1 and d < 1:
                raise ManifestError(f"dim {d} must be positive or -1",
                                    field=f"{path}[{i}].shape[{ax}]")


def split_ref(ref: str, field: str = "ref") -> tuple[str, str]:
    """Split a ``name@version`` reference."""
    if ref.count("@") != 1:
        raise ManifestError(f"service reference {ref!r} is not name@version", field=field)
    name, version = ref.split("@")
    if not name:
        raise ManifestError(f"service reference {ref!r} has empty name", field=field)
    parse_version(version, field=field)
    return name, version


def check_compat(producer_outputs: TypeSignature, consumer_inputs: TypeSignature) -> CompatReport:
    """Positional port compatibility between a producer and a consumer."""
    diags: list[Diagnostic] = []
    p_ports = producer_outputs.ports
    c_ports = consumer_inputs.ports
    if len(p_ports) != len(c_ports):
        diags.append(Diagnostic(-1, "", "", "ports",
                                f"producer has {len(p_ports)} ports, consumer has {len(c_ports)}"))
    for i, (p, c) in enumerate(zip(p_ports, c_ports)):
        if p.dtype != c.dtype:
            diags.append(Diagnostic(i, p.name, c.name, "dtype",
                                    f"producer {p.dtype} != consumer {c.dtype}"))
        if p.tag != c.tag and p.tag != "any" and c.tag != "any":
            diags.append(Diagnostic(i, p.name, c.name, "tag",
                                    f"producer {p.tag!r} != consumer {c.tag!r}"))
        if len(p.shape) != len(c.shape):
            diags.append(Diagnostic(i, p.name, c.name, "rank",
                                    f"producer rank {len(p.shape)} != consumer rank {len(c.shape)}"))
            continue
        for ax, (dp, dc) in enumerate(zip(p.shape, c.shape)):
            if dp != dc and dp != -1 and dc != -1:
                diags.append(Diagnostic(i, p.name, c.name, f"dim {ax}",
                                        f"producer {dp} != consumer {dc}"))
    return CompatReport(compatible=not diags, diagnostics=tuple(diags))


def compose_sequential(services: list[ServiceManifest], name: str,
                       created: str | None = None) -> ServiceManifest:
    """Compose services into a pipeline manifest (version 0.1.0).

    Every adjacent pair must be compatible; the composite takes the first
    service's inputs and the last service's outputs, and references its
    members by ``name@version``.
    """
    if len(services) < 2:
        raise CompositionError(f"composition needs at least two services, got {len(services)}")
    for a, b in zip(services, services[1:]):
        report = check_compat(a.outputs, b.inputs)
        if not report.compatible:
            d = report.diagnostics[0]
            where = "signatures" if d.position < 0 else f"port {d.position}"
            raise CompositionError(
                f"cannot compose {a.ref} -> {b.ref}: {where} {d.field}: {d.reason}",
                report=report, pair=(a.ref, b.ref))
    authors: list[str] = []
    for s in services:
        for author in s.authors:
            if author not in authors:
                authors.append(author)
    manifest = ServiceManifest(
        name=name,
        version="0.1.0",
        authors=tuple(authors),
        inputs=services[0].inputs,
        outputs=services[-1].outputs,
        pipeline=tuple(s.ref for s in services),
        created=created or now_iso(),
    )
    validate_manifest(manifest)
    return manifest


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


# ---------------------------------------------------------------------------
# Canonical JSON encoding


def _port_doc(p: Port) -> dict:
    return {"name": p.name, "dtype": p.dtype, "shape": list(p.shape), "tag": p.tag}


def serialize_manifest(m: ServiceManifest) -> str:
    validate_manifest(m)
    doc: dict = {
        "name": m.name,
        "version": m.version,
        "authors": list(m.authors),
        "inputs": [_port_doc(p) for p in m.inputs.ports],
        "outputs": [_port_doc(p) for p in m.outputs.ports],
    }
    if not m.is_pipeline:
        doc["graph"] = m.graph
        doc["weights"] = m.weights
        doc["sha256"] = m.sha256
    else:
        doc["pipeline"] = list(m.pipeline)
    doc["created"] = m.created
    return json.dumps(doc, indent=2) + "\n"


def _field(doc: dict, key: str, kind, path: str, optional: bool = False):
    if key not in doc:
        if optional:
            return None
        raise ManifestError(f"missing field {key!r}", field=path)
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ManifestError(f"field {key!r} has wrong type {type(value).__name__}", field=path)
    return value


def _parse_signature(doc, path: str) -> TypeSignature:
    if not isinstance(doc, list):
        raise ManifestError(f"{path} must be a list of ports", field=path)
    ports = []
    for i, entry in enumerate(doc):
        p = f"{path}[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError(f"{p} must be an object", field=p)
        unknown = set(entry) - {"name", "dtype", "shape", "tag"}
        if unknown:
            raise ManifestError(f"unknown port field {sorted(unknown)[0]!r}", field=p)
        shape = _field(entry, "shape", list, f"{p}.shape")
        for ax, d in enumerate(shape):
            if not isinstance(d, int) or isinstance(d, bool):
                raise ManifestError("dim must be an integer", field=f"{p}.shape[{ax}]")
        ports.append(Port(
            name=_field(entry, "name", str, f"{p}.name"),
            dtype=_field(entry, "dtype", str, f"{p}.dtype"),
            shape=tuple(shape),
            tag=_field(entry, "tag", str, f"{p}.tag"),
        ))
    return TypeSignature(tuple(ports))


def parse_manifest(text: str) -> ServiceManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}", field="") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object", field="")
    unknown = set(doc) - set(MANIFEST_KEYS)
    if unknown:
        raise ManifestError(f"unknown field {sorted(unknown)[0]!r}", field=sorted(unknown)[0])

    authors = _field(doc, "authors", list, "authors")
    for i, a in enumerate(authors):
        if not isinstance(a, str):
            raise ManifestError("author must be a string", field=f"authors[{i}]")
    pipeline = _field(doc, "pipeline", list, "pipeline", optional=True)
    if pipeline is not None:
        for i, ref in enumerate(pipeline):
            if not isinstance(ref, str):
                raise ManifestError("pipeline entry must be a string", field=f"pipeline[{i}]")
        pipeline = tuple(pipeline)

    for key in ("inputs", "outputs"):
        if key not in doc:
            raise ManifestError(f"missing field {key!r}", field=key)
    manifest = ServiceManifest(
        name=_field(doc, "name", str, "name"),
        version=_field(doc, "version", str, "version"),
        authors=tuple(authors),
        inputs=_parse_signature(doc["inputs"], "inputs"),
        outputs=_parse_signature(doc["outputs"], "outputs"),
        graph=_field(doc, "graph", str, "graph", optional=True),
        weights=_field(doc, "weights", str, "weights", optional=True),
        sha256=_field(doc, "sha256", str, "sha256", optional=True),
        pipeline=pipeline,
        created=_field(doc, "created", str, "created"),
    )
    validate_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# Running services


def validate_inputs(signature: TypeSignature, tensors: dict[str, Tensor]) -> None:
    """Check concrete tensors against a signature; wildcards bind to any dim."""
    for port in signature.ports:
        if port.name not in tensors:
            raise ShapeError(f"missing input for port {port.name!r}", node=port.name)
    declared = set(signature.port_names())
    for name in tensors:
        if name not in declared:
            raise ShapeError(f"input given for undeclared port {name!r}", node=name)
    for port in signature.ports:
        t = tensors[port.name]
        if t.dtype != port.dtype:
            raise ShapeError(f"port {port.name!r}: dtype {t.dtype} != declared {port.dtype}",
                             node=port.name)
        if t.rank != len(port.shape):
            raise ShapeError(
                f"port {port.name!r}: rank {t.rank} != declared rank {len(port.shape)}",
                node=port.name)
        for ax, (want, got) in enumerate(zip(port.shape, t.shape)):
            if want != -1 and want != got:
                raise ShapeError(f"port {port.name!r}: dim {got} != declared {want} on axis {ax}",
                                 node=port.name, axis=ax)


def load_leaf(manifest: ServiceManifest, service_dir) -> Graph:
    """Load a leaf service's graph and weights from its directory."""
    graph = graph_from_json((service_dir / manifest.graph).read_text())
    graph.params = load_weights(service_dir / manifest.weights)
    return graph


def _run_leaf(manifest: ServiceManifest, graph: Graph, inputs: dict[str, Tensor],
              profile: bool) -> tuple[dict[str, Tensor], list[ProfileReport]]:
    validate_inputs(manifest.inputs, inputs)
    graph_ports = list(graph.inputs.keys())
    if (len(graph_ports) != len(manifest.inputs.ports)
            or len(graph.outputs) != len(manifest.outputs.ports)):
        raise ManifestError(
            f"{manifest.ref}: manifest declares {len(manifest.inputs.ports)} inputs/"
            f"{len(manifest.outputs.ports)} outputs but the graph has "
            f"{len(graph_ports)}/{len(graph.outputs)}")
    bound = {graph_ports[i]: inputs[p.name] for i, p in enumerate(manifest.inputs.ports)}
    outputs, report = execute(graph, bound, profile=profile)
    out_names = graph.output_names()
    by_port = {p.name: outputs[out_names[i]] for i, p in enumerate(manifest.outputs.ports)}
    return by_port, [report] if report is not None else []


def run_service(manifest: ServiceManifest, inputs: dict[str, Tensor], store: "LocalStore",
                profile: bool = False,
                graph_cache: dict | None = None,
                ) -> tuple[dict[str, Tensor], list[ProfileReport]]:
    """Run a service; pipelines execute left to right, outputs fed positionally.

    ``graph_cache`` (keyed by (name, version)) lets long-lived callers such
    as the HTTP server load each leaf graph exactly once.
    """
    if not manifest.is_pipeline:
        graph = None
        if graph_cache is not None:
            graph = graph_cache.get((manifest.name, manifest.version))
        if graph is None:
            service_dir = store.service_dir(manifest.name, manifest.version)
            if not (service_dir / "manifest.json").exists():
                raise MissingServiceError(f"service {manifest.ref} is not installed locally")
            graph = load_leaf(manifest, service_dir)
            if graph_cache is not None:
                graph_cache[(manifest.name, manifest.version)] = graph
        return _run_leaf(manifest, graph, inputs, profile)

    validate_inputs(manifest.inputs, inputs)
    reports: list[ProfileReport] = []
    values = [inputs[p.name] for p in manifest.inputs.ports]
    for i, ref in enumerate(manifest.pipeline):
        name, version = split_ref(ref)
        member = store.load_manifest(name, version)
        if len(values) != len(member.inputs.ports):
            raise ShapeError(f"stage {i} ({ref}): takes {len(member.inputs.ports)} "
                             f"inputs, got {len(values)}")
        bound = {p.name: v for p, v in zip(member.inputs.ports, values)}
        try:
            by_port, stage_reports = run_service(member, bound, store,
                                                 profile=profile, graph_cache=graph_cache)
        except ShapeError as exc:
            raise ShapeError(f"stage {i} ({ref}): {exc}", node=exc.node, axis=exc.axis) from exc
        reports.extend(stage_reports)
        values = [by_port[p.name] for p in member.outputs.ports]
    if len(values) != len(manifest.outputs.ports):
        raise ShapeError(f"pipeline yields {len(values)} outputs, manifest declares "
                         f"{len(manifest.outputs.ports)}")
    final = {p.name: v for p, v in zip(manifest.outputs.ports, values)}
    return final, reports


def run_service_dir(service_dir, inputs: dict[str, Tensor], profile: bool = False,
                    ) -> tuple[dict[str, Tensor], list[ProfileReport]]:
    """Run a leaf service straight from its directory, bypassing any store."""
    sdir = Path(service_dir)
    manifest = parse_manifest((sdir / "manifest.json").read_text())
    if manifest.is_pipeline:
        raise MissingServiceError(
            f"{manifest.ref} is a composed service; run it from a store that "
            f"holds its members")
    graph = load_leaf(manifest, sdir)
    return _run_leaf(manifest, graph, inputs, profile)
