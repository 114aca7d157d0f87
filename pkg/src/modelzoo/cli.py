"""Command-line front end wiring all modules together.

Subcommands: build, run, check, compose, pull, publish, serve, bench.
Exit codes: 0 success, 1 usage, 2 validation/compatibility failure,
3 I/O or network failure, 4 integrity failure.  Every failure prints one
machine-parsable line ``error[CODE]: message`` to stderr.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import rng
from .builders import MODELS, count_params, random_init
from .compose import (
    Port,
    ServiceManifest,
    TypeSignature,
    check_compat,
    compose_sequential,
    parse_manifest,
    run_service,
    run_service_dir,
    serialize_manifest,
    split_ref,
)
from .errors import MissingServiceError, ShapeError, ZooError
from .graph import CSV_HEADER, execute
from .registry import LocalStore, export_service, publish, pull, resolve
from .serve import ServiceServer
from .tensor import Tensor
from .weights import load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4

_EXIT_BY_CODE = {
    "shape": EXIT_VALIDATION,
    "param": EXIT_VALIDATION,
    "graph": EXIT_VALIDATION,
    "exec": EXIT_VALIDATION,
    "manifest": EXIT_VALIDATION,
    "compat": EXIT_VALIDATION,
    "network": EXIT_IO,
    "missing": EXIT_IO,
    "startup": EXIT_IO,
    "integrity": EXIT_INTEGRITY,
    "container": EXIT_INTEGRITY,
}

BENCH_CSV_HEADER = "model,rep,latency_us,param_bytes,node_count"


@dataclass(frozen=True)
class BenchResult:
    model: str
    repetitions: int
    latencies_us: tuple[int, ...]
    median_us: int
    param_bytes: int
    node_count: int


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="zoo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a reference model as a service directory")
    p.add_argument("model", choices=sorted(MODELS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="service directory to write")

    p = sub.add_parser("run", help="run a service on tensors from a .zoow file")
    p.add_argument("service", help="service directory, or name@version with --store")
    p.add_argument("--input", required=True, help="ZOOW container of input tensors")
    p.add_argument("--output", help="write output tensors to this ZOOW file")
    p.add_argument("--profile", help="write per-node latency CSV here")
    p.add_argument("--store", help="local store root for composed services")

    p = sub.add_parser("check", help="check producer -> consumer compatibility")
    p.add_argument("producer")
    p.add_argument("consumer")
    p.add_argument("--store", help="local store root for name@version arguments")

    p = sub.add_parser("compose", help="compose services into a pipeline manifest")
    p.add_argument("name", help="name of the composed service")
    p.add_argument("services", nargs="+", help="two or more services, in order")
    p.add_argument("--out", required=True, help="directory for the composed manifest")
    p.add_argument("--store", help="local store root for name@version arguments")

    p = sub.add_parser("pull", help="pull name@version from a registry into the store")
    p.add_argument("ref", help="name@version")
    p.add_argument("--registry", required=True)
    p.add_argument("--store", required=True)

    p = sub.add_parser("publish", help="publish a service directory to a registry")
    p.add_argument("dir")
    p.add_argument("--registry", required=True)

    p = sub.add_parser("serve", help="serve a service over HTTP")
    p.add_argument("service", help="service directory, or name@version with --store")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--store", help="local store root")
    p.add_argument("--profile", action="store_true",
                   help="profile every request, as if it carried ?profile=1")

    p = sub.add_parser("bench", help="benchmark the reference models")
    p.add_argument("--models", required=True, help="comma-separated model names")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--csv", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _created_timestamp() -> str | None:
    """Honour SOURCE_DATE_EPOCH for reproducible manifests."""
    raw = os.environ.get("SOURCE_DATE_EPOCH")
    if not raw:
        return None
    stamp = datetime.fromtimestamp(int(raw), timezone.utc)
    return stamp.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _load_service_arg(arg: str, store_root: str | None):
    """Resolve a CLI service argument to (manifest, service_dir).

    Accepts a service directory, a manifest path, or ``name@version`` (the
    version may be ``latest``) looked up in ``--store``.
    """
    path = Path(arg)
    if path.is_dir() and (path / "manifest.json").is_file():
        return parse_manifest((path / "manifest.json").read_text()), path
    if path.is_file():
        return parse_manifest(path.read_text()), path.parent
    if "@" in arg:
        if store_root is None:
            raise MissingServiceError(f"{arg!r} needs --store to resolve")
        store = LocalStore(Path(store_root))
        name, _, version = arg.partition("@")
        manifest = resolve(name, version, store)
        return manifest, store.service_dir(manifest.name, manifest.version)
    raise MissingServiceError(f"{arg!r} is neither a service directory nor name@version")


def _sorted_tensors(path: str) -> dict[str, Tensor]:
    table = load_weights(path)
    return {name: table[name] for name in sorted(table)}


def _cmd_build(args) -> int:
    spec = MODELS[args.model]
    graph = spec.build()
    params = random_init(graph, args.seed)
    inputs = TypeSignature((Port(spec.input_port, "f32",
                                 (-1,) + spec.input_shape[1:], spec.input_tag),))
    outputs = TypeSignature((Port("scores", "f32",
                                  (-1, spec.output_classes), spec.output_tag),))
    manifest = export_service(graph, params, args.out, name=spec.name, version="1.0.0",
                              authors=("zoo",), inputs=inputs, outputs=outputs,
                              created=_created_timestamp())
    count, nbytes = count_params(graph)
    print(f"built {manifest.ref} in {args.out}: {spec.node_count(graph)} nodes, "
          f"{count} parameters, {nbytes} bytes")
    return EXIT_OK


def _cmd_run(args) -> int:
    manifest, service_dir = _load_service_arg(args.service, args.store)
    tensors = _sorted_tensors(args.input)
    ports = manifest.inputs.ports
    if len(tensors) != len(ports):
        raise ShapeError(f"input file has {len(tensors)} tensors, service declares "
                         f"{len(ports)} ports")
    by_port = {p.name: t for p, t in zip(ports, tensors.values())}

    profile = args.profile is not None
    t0 = time.perf_counter_ns()
    if manifest.is_pipeline:
        if args.store is None:
            raise MissingServiceError("composed services need --store")
        outputs, reports = run_service(manifest, by_port, LocalStore(Path(args.store)),
                                       profile=profile)
    else:
        outputs, reports = run_service_dir(service_dir, by_port, profile=profile)
    latency_us = (time.perf_counter_ns() - t0) // 1000

    for port in manifest.outputs.ports:
        t = outputs[port.name]
        print(f"{port.name} {t.dtype} {'x'.join(str(d) for d in t.shape)}")
    print(f"latency_us {latency_us}")
    if args.output:
        save_weights(outputs, args.output)
    if profile:
        lines = [CSV_HEADER]
        for report in reports:
            for r in report.records:
                shape = "x".join(str(d) for d in r.output_shape)
                lines.append(f"{r.node_id},{r.name},{r.op},{r.latency_us},{shape}")
        Path(args.profile).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_check(args) -> int:
    producer, _ = _load_service_arg(args.producer, args.store)
    consumer, _ = _load_service_arg(args.consumer, args.store)
    report = check_compat(producer.outputs, consumer.inputs)
    if report.compatible:
        print("compatible")
        return EXIT_OK
    for d in report.diagnostics:
        where = "signatures" if d.position < 0 else f"port {d.position}"
        print(f"incompatible: {where} {d.field}: {d.reason}")
    print("error[compat]: signatures are incompatible", file=sys.stderr)
    return EXIT_VALIDATION


def _cmd_compose(args) -> int:
    manifests = [_load_service_arg(s, args.store)[0] for s in args.services]
    composed = compose_sequential(manifests, name=args.name,
                                  created=_created_timestamp())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(serialize_manifest(composed))
    print(f"composed {composed.ref}: {' -> '.join(composed.pipeline)}")
    return EXIT_OK


def _cmd_pull(args) -> int:
    name, version = split_ref(args.ref)
    store = LocalStore(Path(args.store))
    path = pull(name, version, args.registry, store)
    print(f"pulled {args.ref} -> {path}")
    return EXIT_OK


def _cmd_publish(args) -> int:
    receipt = publish(args.dir, args.registry)
    suffix = f" sha256={receipt.sha256}" if receipt.sha256 else ""
    print(f"published {receipt.name}@{receipt.version}{suffix}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    manifest, service_dir = _load_service_arg(args.service, args.store)
    if args.store:
        store = LocalStore(Path(args.store))
    else:
        if manifest.is_pipeline:
            raise MissingServiceError("composed services need --store")
        store = _DirStore(service_dir, manifest)
    server = ServiceServer(manifest, store, profile_default=args.profile)
    server.start(args.port)
    print(f"serving {manifest.ref} on http://127.0.0.1:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


class _DirStore(LocalStore):
    """Degenerate store serving exactly one leaf service from one directory."""

    def __init__(self, service_dir: Path, manifest: ServiceManifest):
        super().__init__(root=service_dir)
        object.__setattr__(self, "_manifest", manifest)

    def service_dir(self, name, version):
        return self.root

    def has(self, name, version):
        return (name, version) == (self._manifest.name, self._manifest.version)

    def load_manifest(self, name, version):
        if not self.has(name, version):
            raise MissingServiceError(f"service {name}@{version} not found")
        return self._manifest


def bench_models(models: list[str], repeat: int, seed: int) -> list[BenchResult]:
    if repeat < 1:
        raise ShapeError(f"--repeat must be >= 1, got {repeat}")
    results = []
    for model_name in models:
        if model_name not in MODELS:
            raise MissingServiceError(f"unknown model {model_name!r}; "
                                      f"choose from {sorted(MODELS)}")
        spec = MODELS[model_name]
        graph = spec.build()
        graph.params = random_init(graph, seed)
        _, param_bytes = count_params(graph)
        nodes = spec.node_count(graph)
        flat = rng.uniform(rng.derive_seed(seed, f"bench/{model_name}"),
                           int(np.prod(spec.input_shape)), 1.0)
        x = Tensor(flat.reshape(spec.input_shape))
        latencies = []
        for _ in range(repeat):
            t0 = time.perf_counter_ns()
            execute(graph, {spec.input_port: x})
            latencies.append((time.perf_counter_ns() - t0) // 1000)
        results.append(BenchResult(
            model=model_name, repetitions=repeat, latencies_us=tuple(latencies),
            median_us=int(statistics.median(latencies)),
            param_bytes=param_bytes, node_count=nodes,
        ))
        del graph, x  # keep peak memory bounded across large models
    return results


def bench_csv(results: list[BenchResult]) -> str:
    lines = [BENCH_CSV_HEADER]
    for r in results:
        for rep, lat in enumerate(r.latencies_us, start=1):
            lines.append(f"{r.model},{rep},{lat},{r.param_bytes},{r.node_count}")
        lines.append(f"{r.model},median,{r.median_us},{r.param_bytes},{r.node_count}")
    return "\n".join(lines) + "\n"


def _cmd_bench(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise _UsageError("--models must name at least one model")
    results = bench_models(models, args.repeat, args.seed)
    Path(args.csv).write_text(bench_csv(results))
    for r in results:
        print(f"{r.model}: median {r.median_us} us over {r.repetitions} reps "
              f"({r.node_count} nodes, {r.param_bytes} bytes)")
    return EXIT_OK


_COMMANDS = {
    "build": _cmd_build,
    "run": _cmd_run,
    "check": _cmd_check,
    "compose": _cmd_compose,
    "pull": _cmd_pull,
    "publish": _cmd_publish,
    "serve": _cmd_serve,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ZooError as exc:
        code = type(exc).code
        print(f"error[{code}]: {exc}", file=sys.stderr)
        return _EXIT_BY_CODE.get(code, EXIT_VALIDATION)
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
