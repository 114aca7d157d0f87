"""Computation graphs: node types, shape inference, execution, profiling.

A graph is a DAG of layer operations with dense integer ids.  Exactly the
``input`` nodes have zero predecessors; every other node consumes the
outputs of its predecessors in declared order.  A graph plus its parameter
table is immutable once loaded and can be shared by concurrent executions;
each execution owns its intermediate buffers and its profile report.

Per-node timing covers kernel compute only (monotonic clock, microsecond
resolution); it excludes graph bookkeeping, so the sum of node latencies is
always bounded by the run's total wall time.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import ExecutionError, GraphError, ShapeError
from .tensor import (
    ConvSpec,
    Tensor,
    _out_dim,
    activation,
    batchnorm_infer,
    concat,
    conv2d,
    dense,
    pool2d,
)

OP_KINDS = ("input", "conv", "pool", "dense", "act", "bn", "concat", "flatten")

CSV_HEADER = "node_id,name,op,latency_us,output_shape"


@dataclass(frozen=True)
class Node:
    """One declared layer operation.

    ``params`` maps the op's slot roles (e.g. ``weight``, ``bias``) to keys
    in the graph's parameter table.
    """

    id: int
    name: str
    op: str
    preds: tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


@dataclass
class Graph:
    nodes: list[Node]
    inputs: dict[str, int]          # port name -> input node id
    outputs: list[int]              # output node ids, in declared order
    param_shapes: dict[str, tuple[int, ...]]
    params: dict[str, Tensor] = field(default_factory=dict)

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def output_names(self) -> list[str]:
        return [self.nodes[i].name for i in self.outputs]


@dataclass(frozen=True)
class NodeTiming:
    node_id: int
    name: str
    op: str
    latency_us: int
    output_shape: tuple[int, ...]


@dataclass(frozen=True)
class ProfileReport:
    """Per-node latency records for one inference run."""

    records: tuple[NodeTiming, ...]
    total_us: int
    timestamp: str


def validate_graph(graph: Graph) -> None:
    """Raise GraphError unless the graph satisfies all structural invariants."""
    n = len(graph.nodes)
    if n == 0:
        raise GraphError("graph has no nodes")
    names = set()
    for i, node in enumerate(graph.nodes):
        if node.id != i:
            raise GraphError(f"node at position {i} has id {node.id}; ids must be dense")
        if not node.name or node.name in names:
            raise GraphError(f"node {i} has empty or duplicate name {node.name!r}")
        names.add(node.name)
        if node.op not in OP_KINDS:
            raise GraphError(f"node {node.name!r} has unknown op {node.op!r}")
        for p in node.preds:
            if not 0 <= p < n:
                raise GraphError(f"node {node.name!r} references predecessor {p} outside 0..{n - 1}")
        if node.op == "input" and node.preds:
            raise GraphError(f"input node {node.name!r} must have zero predecessors")
        if node.op != "input" and not node.preds:
            raise GraphError(f"node {node.name!r} ({node.op}) has zero predecessors")
        for slot, key in node.params.items():
            if key not in graph.param_shapes:
                raise GraphError(f"node {node.name!r} slot {slot!r} references unknown parameter {key!r}")
    if not graph.inputs:
        raise GraphError("graph declares no input ports")
    for port, nid in graph.inputs.items():
        if not 0 <= nid < n or graph.nodes[nid].op != "input":
            raise GraphError(f"input port {port!r} does not point at an input node")
    declared = set(graph.inputs.values())
    for node in graph.nodes:
        if node.op == "input" and node.id not in declared:
            raise GraphError(f"input node {node.name!r} is not bound to a declared port")
    if not graph.outputs:
        raise GraphError("graph declares no outputs")
    for out in graph.outputs:
        if not 0 <= out < n:
            raise GraphError(f"output id {out} outside 0..{n - 1}")

    topo_sort(graph)  # raises on cycles

    reachable = set(graph.inputs.values())
    succs: dict[int, list[int]] = {i: [] for i in range(n)}
    for node in graph.nodes:
        for p in node.preds:
            succs[p].append(node.id)
    frontier = list(reachable)
    while frontier:
        nid = frontier.pop()
        for s in succs[nid]:
            if s not in reachable:
                reachable.add(s)
                frontier.append(s)
    unreachable = [graph.nodes[i].name for i in range(n) if i not in reachable]
    if unreachable:
        raise GraphError(f"nodes not reachable from any input: {unreachable}")


def topo_sort(graph: Graph) -> list[int]:
    """Topological order of node ids, ties broken by ascending id.

    Raises GraphError listing one cycle if the graph is not a DAG.
    """
    n = len(graph.nodes)
    indeg = [len(set(node.preds)) for node in graph.nodes]
    succs: dict[int, set[int]] = {i: set() for i in range(n)}
    for node in graph.nodes:
        for p in set(node.preds):
            succs[p].add(node.id)
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for s in sorted(succs[nid]):
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    if len(order) != n:
        raise GraphError(f"graph has a cycle: {_find_cycle(graph, set(order))}")
    return order


def _find_cycle(graph: Graph, done: set[int]) -> str:
    remaining = [i for i in range(len(graph.nodes)) if i not in done]
    start = remaining[0]
    seen: list[int] = []
    nid = start
    while nid not in seen:
        seen.append(nid)
        nid = next(p for p in graph.nodes[nid].preds if p not in done)
    cycle = seen[seen.index(nid):] + [nid]
    return " -> ".join(str(i) for i in reversed(cycle))


def _shape_of(node: Node, pred_shapes: list[tuple[int, ...]],
              graph: Graph, declared: tuple[int, ...] | None = None) -> tuple[int, ...]:
    """Shape rule for one node given its predecessors' shapes."""
    name = node.name
    if node.op == "input":
        assert declared is not None
        return declared

    if node.op == "conv":
        (s,) = pred_shapes
        if len(s) != 4:
            raise ShapeError(f"node {name!r}: conv needs rank-4 input, got {s}", node=name)
        spec = conv_spec_of(node)
        if s[1] != spec.kernel_shape[1]:
            raise ShapeError(
                f"node {name!r}: input channels {s[1]} != kernel in-channels "
                f"{spec.kernel_shape[1]} on axis 1", node=name, axis=1)
        try:
            oh, ow = spec.out_hw(s[2], s[3])
        except Exception as exc:
            raise ShapeError(f"node {name!r}: {exc}", node=name, axis=2) from exc
        return (s[0], spec.kernel_shape[0], oh, ow)

    if node.op == "pool":
        (s,) = pred_shapes
        if len(s) != 4:
            raise ShapeError(f"node {name!r}: pool needs rank-4 input, got {s}", node=name)
        kh, kw = node.attrs["window"]
        sh, sw = node.attrs["stride"]
        padding = node.attrs["padding"]
        try:
            oh = _out_dim(s[2], kh, sh, padding, axis=2)
            ow = _out_dim(s[3], kw, sw, padding, axis=3)
        except Exception as exc:
            raise ShapeError(f"node {name!r}: {exc}", node=name, axis=2) from exc
        return (s[0], s[1], oh, ow)

    if node.op == "dense":
        (s,) = pred_shapes
        feats = 1
        for d in s[1:]:
            feats *= d
        expected = node.attrs["in_features"]
        if feats != expected:
            raise ShapeError(
                f"node {name!r}: flattened features {feats} != declared {expected} on axis 1",
                node=name, axis=1)
        return (s[0], node.attrs["units"])

    if node.op == "act":
        (s,) = pred_shapes
        return s

    if node.op == "bn":
        (s,) = pred_shapes
        if len(s) < 2:
            raise ShapeError(f"node {name!r}: bn needs rank >= 2, got {s}", node=name)
        ch = graph.param_shapes[node.params["gamma"]][0]
        if s[1] != ch:
            raise ShapeError(
                f"node {name!r}: channels {s[1]} != bn parameters {ch} on axis 1",
                node=name, axis=1)
        return s

    if node.op == "concat":
        axis = node.attrs["axis"]
        first = pred_shapes[0]
        if not 0 <= axis < len(first):
            raise ShapeError(f"node {name!r}: concat axis {axis} out of range for {first}",
                             node=name, axis=axis)
        total = 0
        for i, s in enumerate(pred_shapes):
            if len(s) != len(first):
                raise ShapeError(f"node {name!r}: branch {i} rank {len(s)} != {len(first)}",
                                 node=name)
            for ax in range(len(first)):
                if ax != axis and s[ax] != first[ax]:
                    raise ShapeError(
                        f"node {name!r}: branch {i} dim {s[ax]} != {first[ax]} on axis {ax}",
                        node=name, axis=ax)
            total += s[axis]
        return first[:axis] + (total,) + first[axis + 1:]

    if node.op == "flatten":
        (s,) = pred_shapes
        feats = 1
        for d in s[1:]:
            feats *= d
        return (s[0], feats)

    raise GraphError(f"node {name!r} has unknown op {node.op!r}")


def conv_spec_of(node: Node) -> ConvSpec:
    a = node.attrs
    return ConvSpec(
        kernel_shape=(a["out_channels"], a["in_channels"], a["kernel"][0], a["kernel"][1]),
        stride=tuple(a["stride"]),
        padding=a["padding"],
    )


def infer_shapes(graph: Graph, input_shapes: dict[str, tuple[int, ...]]) -> dict[int, tuple[int, ...]]:
    """Compute each node's output shape from concrete input shapes."""
    for port in graph.inputs:
        if port not in input_shapes:
            raise ShapeError(f"no shape given for input port {port!r}", node=port)
    for port in input_shapes:
        if port not in graph.inputs:
            raise ShapeError(f"shape given for unknown port {port!r}", node=port)

    port_of = {nid: port for port, nid in graph.inputs.items()}
    shapes: dict[int, tuple[int, ...]] = {}
    for nid in topo_sort(graph):
        node = graph.nodes[nid]
        if node.op == "input":
            given = tuple(input_shapes[port_of[nid]])
            _check_pattern(node.attrs.get("shape"), given, node.name)
            shapes[nid] = given
        else:
            shapes[nid] = _shape_of(node, [shapes[p] for p in node.preds], graph)
    return shapes


def _check_pattern(pattern, shape: tuple[int, ...], name: str) -> None:
    if pattern is None:
        return
    if len(pattern) != len(shape):
        raise ShapeError(
            f"input {name!r}: rank {len(shape)} != declared rank {len(pattern)}",
            node=name)
    for ax, (want, got) in enumerate(zip(pattern, shape)):
        if want != -1 and want != got:
            raise ShapeError(
                f"input {name!r}: dim {got} != declared {want} on axis {ax}",
                node=name, axis=ax)


def _eval_node(node: Node, pred_values: list[Tensor], params: dict[str, Tensor]) -> Tensor:
    if node.op == "conv":
        (x,) = pred_values
        out = conv2d(x, params[node.params["weight"]], params[node.params["bias"]],
                     conv_spec_of(node))
        act = node.attrs.get("activation")
        return activation(out, act) if act else out
    if node.op == "pool":
        (x,) = pred_values
        return pool2d(x, tuple(node.attrs["window"]), tuple(node.attrs["stride"]),
                      node.attrs["padding"], node.attrs["mode"])
    if node.op == "dense":
        (x,) = pred_values
        if x.rank != 2:
            x = x.reshape((x.shape[0], -1))
        out = dense(x, params[node.params["weight"]], params[node.params["bias"]])
        act = node.attrs.get("activation")
        return activation(out, act) if act else out
    if node.op == "act":
        (x,) = pred_values
        return activation(x, node.attrs["kind"])
    if node.op == "bn":
        (x,) = pred_values
        return batchnorm_infer(x, params[node.params["gamma"]], params[node.params["beta"]],
                               params[node.params["mean"]], params[node.params["var"]],
                               node.attrs["eps"])
    if node.op == "concat":
        return concat(pred_values, node.attrs["axis"])
    if node.op == "flatten":
        (x,) = pred_values
        return x.reshape((x.shape[0], -1))
    raise GraphError(f"cannot evaluate op {node.op!r}")


def execute(graph: Graph, inputs: dict[str, Tensor], profile: bool = False,
            ) -> tuple[dict[str, Tensor], ProfileReport | None]:
    """Evaluate the graph on the given inputs, in topological order.

    Returns outputs keyed by the output nodes' names, plus a ProfileReport
    when ``profile`` is set.  Intermediate tensors are dropped as soon as
    their last consumer has run.
    """
    missing = [k for k in graph.param_shapes if k not in graph.params]
    if missing:
        raise ExecutionError(f"unresolved parameter slots: {sorted(missing)[:5]}"
                             f"{'...' if len(missing) > 5 else ''}")
    for key, want in graph.param_shapes.items():
        got = graph.params[key].shape
        if tuple(got) != tuple(want):
            raise ExecutionError(f"parameter {key!r} has shape {got}, expected {want}")
    for port in graph.inputs:
        if port not in inputs:
            raise ExecutionError(f"missing input for port {port!r}")
    for port in inputs:
        if port not in graph.inputs:
            raise ExecutionError(f"input given for unknown port {port!r}")
    port_of = {nid: port for port, nid in graph.inputs.items()}
    for nid, port in port_of.items():
        _check_pattern(graph.nodes[nid].attrs.get("shape"), inputs[port].shape,
                       graph.nodes[nid].name)

    order = topo_sort(graph)
    refcount = [0] * len(graph.nodes)
    for node in graph.nodes:
        for p in node.preds:
            refcount[p] += 1
    keep = set(graph.outputs)

    values: dict[int, Tensor] = {}
    records: list[NodeTiming] = []
    wall_start = time.perf_counter_ns()
    for nid in order:
        node = graph.nodes[nid]
        pred_values = [values[p] for p in node.preds]
        t0 = time.perf_counter_ns()
        if node.op == "input":
            out = inputs[port_of[nid]]
        else:
            out = _eval_node(node, pred_values, graph.params)
        t1 = time.perf_counter_ns()
        values[nid] = out
        if profile:
            records.append(NodeTiming(nid, node.name, node.op, (t1 - t0) // 1000, out.shape))
        for p in node.preds:
            refcount[p] -= 1
            if refcount[p] == 0 and p not in keep:
                del values[p]
    wall_ns = time.perf_counter_ns() - wall_start

    outputs = {graph.nodes[i].name: values[i] for i in graph.outputs}
    report = None
    if profile:
        report = ProfileReport(
            records=tuple(records),
            total_us=wall_ns // 1000,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
    return outputs, report


def report_to_csv(report: ProfileReport) -> str:
    """Render a profile as CSV: one row per node in execution order."""
    lines = [CSV_HEADER]
    for r in report.records:
        shape = "x".join(str(d) for d in r.output_shape)
        lines.append(f"{r.node_id},{r.name},{r.op},{r.latency_us},{shape}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: Graph) -> str:
    """Serialise graph structure (not weights) to a stable JSON document."""
    doc = {
        "format": "zoo-graph/1",
        "inputs": graph.inputs,
        "outputs": graph.outputs,
        "nodes": [
            {
                "id": n.id,
                "name": n.name,
                "op": n.op,
                "preds": list(n.preds),
                "attrs": n.attrs,
                "params": n.params,
            }
            for n in graph.nodes
        ],
        "param_shapes": {k: list(v) for k, v in graph.param_shapes.items()},
    }
    return json.dumps(doc, indent=2) + "\n"


def graph_from_json(text: str) -> Graph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "zoo-graph/1":
        raise GraphError("graph file missing format marker 'zoo-graph/1'")
    try:
        nodes = [
            Node(
                id=nd["id"],
                name=nd["name"],
                op=nd["op"],
                preds=tuple(nd["preds"]),
                attrs=nd["attrs"],
                params=nd["params"],
            )
            for nd in doc["nodes"]
        ]
        graph = Graph(
            nodes=nodes,
            inputs={str(k): int(v) for k, v in doc["inputs"].items()},
            outputs=[int(v) for v in doc["outputs"]],
            param_shapes={str(k): tuple(v) for k, v in doc["param_shapes"].items()},
        )
    except (KeyError, TypeError) as exc:
        raise GraphError(f"graph file missing field: {exc}") from exc
    validate_graph(graph)
    return graph
