"""Layer-declaration DSL and the three reference classifier architectures.

Each builder documents its node-accounting convention next to the code,
because the conventional layer counts for these classic networks differ in
whether they include the input binding node and how they expand fused
blocks.  ``ModelSpec.node_count`` applies the right convention per model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from . import rng
from .errors import DimensionError
from .graph import Graph, Node, validate_graph
from .tensor import ACTIVATIONS, ConvSpec, PADDINGS, POOL_MODES, Tensor, _out_dim


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


class GraphBuilder:
    """Incrementally declare a graph; shapes are tracked as layers are added.

    Methods return node ids, which later layers take as their input.  The
    batch dimension is symbolic (-1) throughout building.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._inputs: dict[str, int] = {}
        self._param_shapes: dict[str, tuple[int, ...]] = {}
        self._shapes: dict[int, tuple[int, ...]] = {}
        self._counters: dict[str, int] = {}

    def shape(self, node_id: int) -> tuple[int, ...]:
        return self._shapes[node_id]

    def _autoname(self, base: str, explicit: str | None) -> str:
        if explicit is not None:
            return explicit
        n = self._counters.get(base, 0) + 1
        self._counters[base] = n
        return f"{base}{n}"

    def _add(self, name: str, op: str, preds: tuple[int, ...], attrs: dict,
             params: dict, shape: tuple[int, ...]) -> int:
        nid = len(self._nodes)
        self._nodes.append(Node(id=nid, name=name, op=op, preds=preds,
                                attrs=attrs, params=params))
        self._shapes[nid] = shape
        return nid

    def input(self, port: str, shape: tuple[int, ...]) -> int:
        """Declare an input port; ``shape`` excludes the batch dimension."""
        full = (-1,) + tuple(shape)
        nid = self._add(port, "input", (), {"shape": list(full)}, {}, full)
        self._inputs[port] = nid
        return nid

    def conv(self, x: int, out_channels: int, kernel, stride=1, padding: str = "same",
             activation: str | None = None, name: str | None = None) -> int:
        kh, kw = _pair(kernel)
        sh, sw = _pair(stride)
        if activation not in (None, "relu", "tanh"):
            raise DimensionError(f"conv: cannot fuse activation {activation!r}")
        s = self._shapes[x]
        if len(s) != 4:
            raise DimensionError(f"conv: input shape {s} is not rank 4")
        in_ch = s[1]
        spec = ConvSpec((out_channels, in_ch, kh, kw), (sh, sw), padding)
        oh, ow = spec.out_hw(s[2], s[3])
        node_name = self._autoname("conv", name)
        params = {"weight": f"{node_name}.weight", "bias": f"{node_name}.bias"}
        self._param_shapes[params["weight"]] = (out_channels, in_ch, kh, kw)
        self._param_shapes[params["bias"]] = (out_channels,)
        attrs = {"out_channels": out_channels, "in_channels": in_ch,
                 "kernel": [kh, kw], "stride": [sh, sw], "padding": padding,
                 "activation": activation}
        return self._add(node_name, "conv", (x,), attrs, params, (s[0], out_channels, oh, ow))

    def pool(self, x: int, mode: str, window, stride=None, padding: str = "valid",
             name: str | None = None) -> int:
        kh, kw = _pair(window)
        sh, sw = _pair(stride if stride is not None else window)
        if mode not in POOL_MODES:
            raise DimensionError(f"pool: unknown mode {mode!r}")
        if padding not in PADDINGS:
            raise DimensionError(f"pool: unknown padding {padding!r}")
        s = self._shapes[x]
        if len(s) != 4:
            raise DimensionError(f"pool: input shape {s} is not rank 4")
        oh = _out_dim(s[2], kh, sh, padding, axis=2)
        ow = _out_dim(s[3], kw, sw, padding, axis=3)
        attrs = {"mode": mode, "window": [kh, kw], "stride": [sh, sw], "padding": padding}
        return self._add(self._autoname("pool", name), "pool", (x,), attrs, {},
                         (s[0], s[1], oh, ow))

    def dense(self, x: int, units: int, activation: str | None = None,
              name: str | None = None) -> int:
        if activation not in (None, "relu", "tanh"):
            raise DimensionError(f"dense: cannot fuse activation {activation!r}")
        s = self._shapes[x]
        in_features = 1
        for d in s[1:]:
            in_features *= d
        node_name = self._autoname("dense", name)
        params = {"weight": f"{node_name}.weight", "bias": f"{node_name}.bias"}
        self._param_shapes[params["weight"]] = (in_features, units)
        self._param_shapes[params["bias"]] = (units,)
        attrs = {"units": units, "in_features": in_features, "activation": activation}
        return self._add(node_name, "dense", (x,), attrs, params, (s[0], units))

    def act(self, x: int, kind: str, name: str | None = None) -> int:
        if kind not in ACTIVATIONS:
            raise DimensionError(f"act: unknown activation {kind!r}")
        return self._add(self._autoname(kind, name), "act", (x,), {"kind": kind}, {},
                         self._shapes[x])

    def bn(self, x: int, eps: float = 1e-3, name: str | None = None) -> int:
        s = self._shapes[x]
        if len(s) < 2:
            raise DimensionError(f"bn: input shape {s} is not rank >= 2")
        channels = s[1]
        node_name = self._autoname("bn", name)
        params = {role: f"{node_name}.{role}" for role in ("gamma", "beta", "mean", "var")}
        for key in params.values():
            self._param_shapes[key] = (channels,)
        return self._add(node_name, "bn", (x,), {"eps": eps, "channels": channels},
                         params, s)

    def concat(self, xs: list[int], axis: int = 1, name: str | None = None) -> int:
        shapes = [self._shapes[x] for x in xs]
        first = shapes[0]
        total = sum(s[axis] for s in shapes)
        out = first[:axis] + (total,) + first[axis + 1:]
        return self._add(self._autoname("concat", name), "concat", tuple(xs),
                         {"axis": axis}, {}, out)

    def flatten(self, x: int, name: str | None = None) -> int:
        s = self._shapes[x]
        feats = 1
        for d in s[1:]:
            feats *= d
        return self._add(self._autoname("flatten", name), "flatten", (x,), {}, {},
                         (s[0], feats))

    def finish(self, outputs: list[int]) -> Graph:
        graph = Graph(
            nodes=list(self._nodes),
            inputs=dict(self._inputs),
            outputs=list(outputs),
            param_shapes=dict(self._param_shapes),
        )
        validate_graph(graph)
        return graph


def build_lenet5() -> Graph:
    """LeNet-5 for 1x32x32 inputs, original 6-16-120 channel plan.

    Node accounting: the classic eight-layer description counts the two
    tanh-fused convolutions, two average poolings, three dense layers (the
    120-unit stage consumes the flattened 16x5x5 map directly) and the final
    softmax.  The input binding node is not part of that count, so the graph
    itself has nine nodes.
    """
    b = GraphBuilder()
    x = b.input("image", (1, 32, 32))
    x = b.conv(x, 6, 5, padding="valid", activation="tanh")
    x = b.pool(x, "avg", 2, stride=2)
    x = b.conv(x, 16, 5, padding="valid", activation="tanh")
    x = b.pool(x, "avg", 2, stride=2)
    x = b.dense(x, 120, activation="tanh")
    x = b.dense(x, 84, activation="tanh")
    x = b.dense(x, 10)
    x = b.act(x, "softmax")
    return b.finish([x])


def build_vgg16() -> Graph:
    """VGG16 for 3x224x224 inputs.

    Node accounting: every activation is declared as its own relu node and
    the input binding node is counted, giving exactly 38 nodes: 1 input +
    13 conv + 13 relu + 5 maxpool + 3 dense + 2 relu + 1 softmax.  The first
    dense stage consumes the flattened 512x7x7 map directly.
    """
    plan = [64, 64, "P", 128, 128, "P", 256, 256, 256, "P",
            512, 512, 512, "P", 512, 512, 512, "P"]
    b = GraphBuilder()
    x = b.input("image", (3, 224, 224))
    for step in plan:
        if step == "P":
            x = b.pool(x, "max", 2, stride=2)
        else:
            x = b.conv(x, step, 3, padding="same")
            x = b.act(x, "relu")
    x = b.dense(x, 4096)
    x = b.act(x, "relu")
    x = b.dense(x, 4096)
    x = b.act(x, "relu")
    x = b.dense(x, 1000)
    x = b.act(x, "softmax")
    return b.finish([x])


def _conv_bn(b: GraphBuilder, x: int, out_channels: int, kernel, stride=1,
             padding: str = "same") -> int:
    """Reusable conv + batchnorm + relu unit: three graph nodes."""
    x = b.conv(x, out_channels, kernel, stride=stride, padding=padding)
    x = b.bn(x)
    return b.act(x, "relu")


def _inception_a(b: GraphBuilder, x: int, pool_features: int) -> int:
    b1 = _conv_bn(b, x, 64, 1)
    b2 = _conv_bn(b, x, 48, 1)
    b2 = _conv_bn(b, b2, 64, 5)
    b3 = _conv_bn(b, x, 64, 1)
    b3 = _conv_bn(b, b3, 96, 3)
    b3 = _conv_bn(b, b3, 96, 3)
    b4 = b.pool(x, "avg", 3, stride=1, padding="same")
    b4 = _conv_bn(b, b4, pool_features, 1)
    return b.concat([b1, b2, b3, b4])


def _inception_b(b: GraphBuilder, x: int) -> int:
    b1 = _conv_bn(b, x, 384, 3, stride=2, padding="valid")
    b2 = _conv_bn(b, x, 64, 1)
    b2 = _conv_bn(b, b2, 96, 3)
    b2 = _conv_bn(b, b2, 96, 3, stride=2, padding="valid")
    b3 = b.pool(x, "max", 3, stride=2)
    return b.concat([b1, b2, b3])


def _inception_c(b: GraphBuilder, x: int, channels_7x7: int) -> int:
    c7 = channels_7x7
    b1 = _conv_bn(b, x, 192, 1)
    b2 = _conv_bn(b, x, c7, 1)
    b2 = _conv_bn(b, b2, c7, (1, 7))
    b2 = _conv_bn(b, b2, 192, (7, 1))
    b3 = _conv_bn(b, x, c7, 1)
    b3 = _conv_bn(b, b3, c7, (7, 1))
    b3 = _conv_bn(b, b3, c7, (1, 7))
    b3 = _conv_bn(b, b3, c7, (7, 1))
    b3 = _conv_bn(b, b3, 192, (1, 7))
    b4 = b.pool(x, "avg", 3, stride=1, padding="same")
    b4 = _conv_bn(b, b4, 192, 1)
    return b.concat([b1, b2, b3, b4])


def _inception_d(b: GraphBuilder, x: int) -> int:
    b1 = _conv_bn(b, x, 192, 1)
    b1 = _conv_bn(b, b1, 320, 3, stride=2, padding="valid")
    b2 = _conv_bn(b, x, 192, 1)
    b2 = _conv_bn(b, b2, 192, (1, 7))
    b2 = _conv_bn(b, b2, 192, (7, 1))
    b2 = _conv_bn(b, b2, 192, 3, stride=2, padding="valid")
    b3 = b.pool(x, "max", 3, stride=2)
    return b.concat([b1, b2, b3])


def _inception_e(b: GraphBuilder, x: int) -> int:
    b1 = _conv_bn(b, x, 320, 1)
    b2 = _conv_bn(b, x, 384, 1)
    b2a = _conv_bn(b, b2, 384, (1, 3))
    b2b = _conv_bn(b, b2, 384, (3, 1))
    b2 = b.concat([b2a, b2b])
    b3 = _conv_bn(b, x, 448, 1)
    b3 = _conv_bn(b, b3, 384, 3)
    b3a = _conv_bn(b, b3, 384, (1, 3))
    b3b = _conv_bn(b, b3, 384, (3, 1))
    b3 = b.concat([b3a, b3b])
    b4 = b.pool(x, "avg", 3, stride=1, padding="same")
    b4 = _conv_bn(b, b4, 192, 1)
    return b.concat([b1, b2, b3, b4])


def build_inceptionv3() -> Graph:
    """InceptionV3 for 3x299x299 inputs.

    Node accounting: every conv-bn-relu unit expands to three nodes (94
    units, 282 nodes), each branch merge is an explicit concat (one per
    block plus the two inner merges in each of the final two blocks, 15
    total), pooling contributes 14 nodes (2 stem + 11 in-block + 1 global
    average), and the classifier is a single dense node consuming the
    flattened 2048x1x1 map and emitting logits.  With the input binding
    node that is 1 + 282 + 14 + 15 + 1 = 313 nodes exactly.
    """
    b = GraphBuilder()
    x = b.input("image", (3, 299, 299))
    x = _conv_bn(b, x, 32, 3, stride=2, padding="valid")
    x = _conv_bn(b, x, 32, 3, padding="valid")
    x = _conv_bn(b, x, 64, 3)
    x = b.pool(x, "max", 3, stride=2)
    x = _conv_bn(b, x, 80, 1, padding="valid")
    x = _conv_bn(b, x, 192, 3, padding="valid")
    x = b.pool(x, "max", 3, stride=2)
    x = _inception_a(b, x, 32)
    x = _inception_a(b, x, 64)
    x = _inception_a(b, x, 64)
    x = _inception_b(b, x)
    x = _inception_c(b, x, 128)
    x = _inception_c(b, x, 160)
    x = _inception_c(b, x, 160)
    x = _inception_c(b, x, 192)
    x = _inception_d(b, x)
    x = _inception_e(b, x)
    x = _inception_e(b, x)
    x = b.pool(x, "avg", 8, stride=1)
    x = b.dense(x, 1000)
    return b.finish([x])


def count_params(graph: Graph) -> tuple[int, int]:
    """Total parameter element count across all slots, and f32 bytes."""
    count = 0
    for shape in graph.param_shapes.values():
        n = 1
        for d in shape:
            n *= d
        count += n
    return count, 4 * count


def fan_in_out(shape: tuple[int, ...]) -> tuple[int, int]:
    """Fan-in/fan-out of a weight slot: conv kernels are OIHW, dense is DM."""
    if len(shape) == 4:
        o, c, kh, kw = shape
        return c * kh * kw, o * kh * kw
    if len(shape) == 2:
        return shape[0], shape[1]
    return shape[0], shape[0]


def random_init(graph: Graph, seed: int) -> dict[str, Tensor]:
    """Deterministic parameter table for a graph.

    Weight slots draw Xavier-uniform values with bound
    sqrt(6 / (fan_in + fan_out)) from the counter-based generator in
    :mod:`modelzoo.rng`, streamed per slot name, so the same seed gives
    bit-identical tables on every platform regardless of iteration order.
    Vector slots use fixed constants: biases, batchnorm shift and running
    mean are zero; batchnorm scale and running variance are one.  Variance
    must stay positive, which rules out symmetric random noise there.
    """
    table: dict[str, Tensor] = {}
    for key, shape in graph.param_shapes.items():
        role = key.rsplit(".", 1)[1]
        if role == "weight":
            fan_in, fan_out = fan_in_out(shape)
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            size = 1
            for d in shape:
                size *= d
            vals = rng.uniform(rng.derive_seed(seed, key), size, bound)
            table[key] = Tensor(vals.reshape(shape))
        elif role in ("bias", "beta", "mean"):
            table[key] = Tensor.zeros(shape)
        elif role in ("gamma", "var"):
            table[key] = Tensor.full(shape, 1.0)
        else:
            raise DimensionError(f"parameter {key!r} has unknown slot role {role!r}")
    return table


@dataclass(frozen=True)
class ModelSpec:
    """Registry entry for a buildable model and its documented conventions."""

    name: str
    build: Callable[[], Graph]
    input_port: str
    input_shape: tuple[int, int, int, int]
    input_tag: str
    output_tag: str
    output_classes: int
    counts_input_node: bool

    def node_count(self, graph: Graph) -> int:
        """Layer count under this model's accounting convention."""
        return len(graph.nodes) - (0 if self.counts_input_node else 1)


MODELS: dict[str, ModelSpec] = {
    "lenet5": ModelSpec(
        name="lenet5", build=build_lenet5, input_port="image",
        input_shape=(1, 1, 32, 32), input_tag="image/gray",
        output_tag="probabilities", output_classes=10, counts_input_node=False,
    ),
    "vgg16": ModelSpec(
        name="vgg16", build=build_vgg16, input_port="image",
        input_shape=(1, 3, 224, 224), input_tag="image/rgb",
        output_tag="probabilities", output_classes=1000, counts_input_node=True,
    ),
    "inceptionv3": ModelSpec(
        name="inceptionv3", build=build_inceptionv3, input_port="image",
        input_shape=(1, 3, 299, 299), input_tag="image/rgb",
        output_tag="logits", output_classes=1000, counts_input_node=True,
    ),
}
