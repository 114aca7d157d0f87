"""Composable ML inference services for local devices.

A small NCHW inference engine with per-node latency profiling, three
reference classifier architectures, a typed service-composition layer, a
content-addressed pull/publish registry, and an HTTP serving front end.
"""

from .tensor import ConvSpec, Tensor, tensor_equal
from .graph import (
    Graph,
    Node,
    ProfileReport,
    execute,
    infer_shapes,
    report_to_csv,
    topo_sort,
)
from .builders import MODELS, GraphBuilder, count_params, random_init
from .weights import load_weights, save_weights
from .compose import (
    CompatReport,
    Port,
    ServiceManifest,
    TypeSignature,
    check_compat,
    compose_sequential,
    parse_manifest,
    run_service,
    serialize_manifest,
)
from .registry import LocalStore, export_service, publish, pull, resolve
from .serve import serve

__version__ = "0.1.0"

__all__ = [
    "ConvSpec",
    "Tensor",
    "tensor_equal",
    "Graph",
    "Node",
    "ProfileReport",
    "execute",
    "infer_shapes",
    "report_to_csv",
    "topo_sort",
    "MODELS",
    "GraphBuilder",
    "count_params",
    "random_init",
    "load_weights",
    "save_weights",
    "CompatReport",
    "Port",
    "ServiceManifest",
    "TypeSignature",
    "check_compat",
    "compose_sequential",
    "parse_manifest",
    "run_service",
    "serialize_manifest",
    "LocalStore",
    "export_service",
    "publish",
    "pull",
    "resolve",
    "serve",
    "__version__",
]
