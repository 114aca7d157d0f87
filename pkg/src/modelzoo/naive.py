"""Reference kernels written as plain nested loops, plus a naive interpreter.

Everything here is deliberately slow and deliberately independent of the
vectorised kernels in :mod:`modelzoo.tensor`: computation happens on Python
lists in double precision, padding offsets are re-derived from first
principles, and the interpreter walks the graph by memoised recursion
instead of the executor's scheduled loop.  The test-suite uses these as the
ground truth the fast path must match.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor
from .graph import Graph


def _same_pad(size: int, k: int, stride: int) -> tuple[int, int]:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo


def _out_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    return (size - k) // stride + 1


def naive_conv2d(x: Tensor, kernel: Tensor, bias: Tensor,
                 stride: tuple[int, int], padding: str) -> Tensor:
    """Direct six-nested-loop cross-correlation."""
    xs = x.array.tolist()
    ks = kernel.array.tolist()
    bs = bias.array.tolist()
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = kernel.shape
    assert c == in_ch
    sh, sw = stride
    pt, _ = _same_pad(h, kh, sh) if padding == "same" else (0, 0)
    pl, _ = _same_pad(w, kw, sw) if padding == "same" else (0, 0)
    oh = _out_size(h, kh, sh, padding)
    ow = _out_size(w, kw, sw, padding)

    out = [[[[0.0] * ow for _ in range(oh)] for _ in range(out_ch)] for _ in range(n)]
    for b in range(n):
        for o in range(out_ch):
            for i in range(oh):
                for j in range(ow):
                    acc = bs[o]
                    for ci in range(in_ch):
                        for di in range(kh):
                            for dj in range(kw):
                                yy = i * sh - pt + di
                                xx = j * sw - pl + dj
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += xs[b][ci][yy][xx] * ks[o][ci][di][dj]
                    out[b][o][i][j] = acc
    return Tensor(np.asarray(out, dtype=x.array.dtype))


def naive_pool2d(x: Tensor, window: tuple[int, int], stride: tuple[int, int],
                 padding: str, mode: str) -> Tensor:
    xs = x.array.tolist()
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    pt, _ = _same_pad(h, kh, sh) if padding == "same" else (0, 0)
    pl, _ = _same_pad(w, kw, sw) if padding == "same" else (0, 0)
    oh = _out_size(h, kh, sh, padding)
    ow = _out_size(w, kw, sw, padding)

    out = [[[[0.0] * ow for _ in range(oh)] for _ in range(c)] for _ in range(n)]
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    cells = []
                    for di in range(kh):
                        for dj in range(kw):
                            yy = i * sh - pt + di
                            xx = j * sw - pl + dj
                            if 0 <= yy < h and 0 <= xx < w:
                                cells.append(xs[b][ci][yy][xx])
                    out[b][ci][i][j] = max(cells) if mode == "max" else sum(cells) / len(cells)
    return Tensor(np.asarray(out, dtype=x.array.dtype))


def naive_dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Triple-loop matrix multiply plus bias."""
    xs = x.array.tolist()
    ws = weight.array.tolist()
    bs = bias.array.tolist()
    n, d = x.shape
    _, m = weight.shape
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = bs[j]
            for k in range(d):
                acc += xs[i][k] * ws[k][j]
            out[i][j] = acc
    return Tensor(np.asarray(out, dtype=x.array.dtype))


def naive_activation(x: Tensor, kind: str) -> Tensor:
    flat = x.array.reshape(-1).tolist()
    if kind == "relu":
        vals = [v if v > 0 else 0.0 for v in flat]
    elif kind == "tanh":
        vals = [math.tanh(v) for v in flat]
    elif kind == "softmax":
        width = x.shape[-1]
        vals = []
        for row_start in range(0, len(flat), width):
            row = flat[row_start:row_start + width]
            peak = max(row)
            exps = [math.exp(v - peak) for v in row]
            total = sum(exps)
            vals.extend(e / total for e in exps)
    else:
        raise ValueError(kind)
    return Tensor(np.asarray(vals, dtype=x.array.dtype).reshape(x.shape))


def naive_batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mean: Tensor,
                    var: Tensor, eps: float) -> Tensor:
    """Apply the per-element scalar formula gamma*(v-mean)/sqrt(var+eps)+beta."""
    arr = x.array
    g = gamma.array.tolist()
    bt = beta.array.tolist()
    mu = mean.array.tolist()
    vr = var.array.tolist()
    out = np.empty(x.shape, dtype=np.float64)
    flat_in = arr.reshape(arr.shape[0], arr.shape[1], -1)
    flat_out = out.reshape(arr.shape[0], arr.shape[1], -1)
    for b in range(arr.shape[0]):
        for ci in range(arr.shape[1]):
            row = flat_in[b, ci].tolist()
            denom = math.sqrt(vr[ci] + eps)
            flat_out[b, ci] = [g[ci] * (v - mu[ci]) / denom + bt[ci] for v in row]
    return Tensor(out.astype(x.array.dtype))


def naive_concat(tensors: list[Tensor], axis: int) -> Tensor:
    """Concatenate by explicit index mapping into a preallocated output."""
    ref = tensors[0]
    total = sum(t.shape[axis] for t in tensors)
    out_shape = ref.shape[:axis] + (total,) + ref.shape[axis + 1:]
    out = np.empty(out_shape, dtype=ref.array.dtype)
    offset = 0
    for t in tensors:
        idx = [slice(None)] * len(out_shape)
        idx[axis] = slice(offset, offset + t.shape[axis])
        out[tuple(idx)] = t.array
        offset += t.shape[axis]
    return Tensor(out)


def naive_execute(graph: Graph, inputs: dict[str, Tensor]) -> dict[str, Tensor]:
    """Evaluate a graph with the loop kernels, memoised depth-first.

    Mirrors the executor's node semantics (fused activations, auto-flatten
    before dense) but shares none of its code path.
    """
    port_of = {nid: port for port, nid in graph.inputs.items()}
    memo: dict[int, Tensor] = {}

    def value(nid: int) -> Tensor:
        if nid in memo:
            return memo[nid]
        node = graph.nodes[nid]
        if node.op == "input":
            out = inputs[port_of[nid]]
        elif node.op == "conv":
            x = value(node.preds[0])
            out = naive_conv2d(x, graph.params[node.params["weight"]],
                               graph.params[node.params["bias"]],
                               tuple(node.attrs["stride"]), node.attrs["padding"])
            if node.attrs.get("activation"):
                out = naive_activation(out, node.attrs["activation"])
        elif node.op == "pool":
            out = naive_pool2d(value(node.preds[0]), tuple(node.attrs["window"]),
                               tuple(node.attrs["stride"]), node.attrs["padding"],
                               node.attrs["mode"])
        elif node.op == "dense":
            x = value(node.preds[0])
            if x.rank != 2:
                x = x.reshape((x.shape[0], -1))
            out = naive_dense(x, graph.params[node.params["weight"]],
                              graph.params[node.params["bias"]])
            if node.attrs.get("activation"):
                out = naive_activation(out, node.attrs["activation"])
        elif node.op == "act":
            out = naive_activation(value(node.preds[0]), node.attrs["kind"])
        elif node.op == "bn":
            out = naive_batchnorm(value(node.preds[0]),
                                  graph.params[node.params["gamma"]],
                                  graph.params[node.params["beta"]],
                                  graph.params[node.params["mean"]],
                                  graph.params[node.params["var"]],
                                  node.attrs["eps"])
        elif node.op == "concat":
            out = naive_concat([value(p) for p in node.preds], node.attrs["axis"])
        elif node.op == "flatten":
            x = value(node.preds[0])
            out = x.reshape((x.shape[0], -1))
        else:
            raise ValueError(node.op)
        memo[nid] = out
        return out

    return {graph.nodes[i].name: value(i) for i in graph.outputs}
