"""Dense tensors and the forward-pass kernels used by the graph executor.

Conventions, fixed once for the whole package:

* layout is row-major NCHW (batch, channels, height, width), dtype ``f32``
  by default with ``f64`` available;
* ``same`` padding pads with zeros, split evenly, and any odd leftover
  column/row goes to the bottom/right edge;
* average pooling divides by the number of window cells that fall inside
  the unpadded input, so padding never dilutes edge averages;
* tensors are immutable once constructed and every kernel is a pure
  function of its arguments, so shared graphs can be evaluated from many
  threads without locking.

Convolution runs as im2col plus one matrix multiply.  The deliberately slow
loop implementations that the test-suite compares against live in
:mod:`modelzoo.naive`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

DTYPES = {"f32": np.float32, "f64": np.float64}
_NP_TO_DTYPE = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

MAX_RANK = 4

ACTIVATIONS = ("relu", "tanh", "softmax")
PADDINGS = ("same", "valid")
POOL_MODES = ("max", "avg")


class Tensor:
    """Immutable dense array, rank 1..4, dtype f32 or f64."""

    __slots__ = ("array",)

    def __init__(self, array):
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _NP_TO_DTYPE:
            if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.float16:
                arr = arr.astype(np.float32)
            else:
                raise DimensionError(f"unsupported dtype {arr.dtype}; expected f32 or f64")
        if arr.ndim < 1 or arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} outside supported range 1..{MAX_RANK}")
        if arr.size == 0:
            raise DimensionError("zero-size tensors are not allowed")
        if arr.flags.writeable:
            if not arr.flags.owndata:
                arr = arr.copy()
            arr.flags.writeable = False
        self.array = arr

    @property
    def dtype(self) -> str:
        return _NP_TO_DTYPE[self.array.dtype]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    def data(self) -> np.ndarray:
        """Flat row-major view of the buffer."""
        return self.array.reshape(-1)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return Tensor(self.array.reshape(shape))

    def tobytes(self) -> bytes:
        return self.array.astype("<f4" if self.dtype == "f32" else "<f8").tobytes()

    @classmethod
    def zeros(cls, shape, dtype: str = "f32") -> "Tensor":
        return cls(np.zeros(shape, dtype=DTYPES[dtype]))

    @classmethod
    def full(cls, shape, value: float, dtype: str = "f32") -> "Tensor":
        return cls(np.full(shape, value, dtype=DTYPES[dtype]))

    def __repr__(self) -> str:
        dims = "x".join(str(d) for d in self.shape)
        return f"Tensor({self.dtype}, {dims})"


def tensor_equal(a: Tensor, b: Tensor) -> bool:
    """Bit-exact equality: same dtype, same shape, same buffer bytes."""
    return a.dtype == b.dtype and a.shape == b.shape and a.array.tobytes() == b.array.tobytes()


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d convolution: kernel shape, stride, padding mode.

    ``kernel_shape`` is (out_channels, in_channels, kh, kw); strides must be
    at least 1 and padding is ``"same"`` or ``"valid"``.
    """

    kernel_shape: tuple[int, int, int, int]
    stride: tuple[int, int] = (1, 1)
    padding: str = "valid"

    def __post_init__(self):
        if len(self.kernel_shape) != 4 or min(self.kernel_shape) < 1:
            raise DimensionError(f"kernel shape {self.kernel_shape} must be 4 positive dims")
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise DimensionError(f"stride {self.stride} must be two dims >= 1")
        if self.padding not in PADDINGS:
            raise DimensionError(f"padding {self.padding!r} must be one of {PADDINGS}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        _, _, kh, kw = self.kernel_shape
        return (
            _out_dim(h, kh, self.stride[0], self.padding, axis=2),
            _out_dim(w, kw, self.stride[1], self.padding, axis=3),
        )

    def pad_amounts(self, h: int, w: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) zero padding for this input size."""
        _, _, kh, kw = self.kernel_shape
        top, bottom = _pad_pair(h, kh, self.stride[0], self.padding)
        left, right = _pad_pair(w, kw, self.stride[1], self.padding)
        return top, bottom, left, right


def _out_dim(size: int, k: int, stride: int, padding: str, axis: int) -> int:
    if padding == "same":
        return -(-size // stride)  # ceil
    out = (size - k) // stride + 1
    if out < 1:
        raise DimensionError(
            f"window {k} with stride {stride} does not fit input of {size} on axis {axis}"
        )
    return out


def _pad_pair(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo  # odd leftover goes to the high (bottom/right) edge


def _im2col(padded: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            out_h: int, out_w: int) -> np.ndarray:
    """Gather sliding windows of a padded NCHW array.

    Returns shape (n, c, kh, kw, out_h, out_w); the caller reduces or
    reshapes as needed.
    """
    n, c, _, _ = padded.shape
    col = np.empty((n, c, kh, kw, out_h, out_w), dtype=padded.dtype)
    for y in range(kh):
        y_max = y + sh * out_h
        for x in range(kw):
            x_max = x + sw * out_w
            col[:, :, y, x, :, :] = padded[:, :, y:y_max:sh, x:x_max:sw]
    return col


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlate an NCHW input with an OIHW kernel and add a bias."""
    if x.rank != 4:
        raise DimensionError(f"conv2d: input rank {x.rank} != 4")
    if kernel.shape != spec.kernel_shape:
        raise DimensionError(
            f"conv2d: kernel shape {kernel.shape} does not match spec {spec.kernel_shape}"
        )
    out_ch, in_ch, kh, kw = spec.kernel_shape
    n, c, h, w = x.shape
    if c != in_ch:
        raise DimensionError(
            f"conv2d: input has {c} channels on axis 1 but kernel expects {in_ch}"
        )
    if bias.shape != (out_ch,):
        raise DimensionError(
            f"conv2d: bias shape {bias.shape} != ({out_ch},) on axis 0"
        )

    out_h, out_w = spec.out_hw(h, w)
    top, bottom, left, right = spec.pad_amounts(h, w)
    padded = np.pad(x.array, ((0, 0), (0, 0), (top, bottom), (left, right)))
    col = _im2col(padded, kh, kw, spec.stride[0], spec.stride[1], out_h, out_w)
    col = col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)
    w_mat = kernel.array.reshape(out_ch, -1)
    out = col @ w_mat.T + bias.array
    out = out.reshape(n, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
    return Tensor(np.ascontiguousarray(out))


def pool2d(x: Tensor, window: tuple[int, int], stride: tuple[int, int],
           padding: str, mode: str) -> Tensor:
    """Max or average pooling over NCHW spatial windows.

    Average pooling divides each window by the number of cells that lie
    inside the unpadded input.
    """
    if x.rank != 4:
        raise DimensionError(f"pool2d: input rank {x.rank} != 4")
    if mode not in POOL_MODES:
        raise DimensionError(f"pool2d: mode {mode!r} must be one of {POOL_MODES}")
    if padding not in PADDINGS:
        raise DimensionError(f"pool2d: padding {padding!r} must be one of {PADDINGS}")
    kh, kw = window
    sh, sw = stride
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise DimensionError(f"pool2d: window {window} and stride {stride} must be >= 1")
    n, c, h, w = x.shape

    out_h = _out_dim(h, kh, sh, padding, axis=2)
    out_w = _out_dim(w, kw, sw, padding, axis=3)
    top, bottom = _pad_pair(h, kh, sh, padding)
    left, right = _pad_pair(w, kw, sw, padding)
    if kh > h + top + bottom:
        raise DimensionError(f"pool2d: window {kh} exceeds padded height {h + top + bottom} on axis 2")
    if kw > w + left + right:
        raise DimensionError(f"pool2d: window {kw} exceeds padded width {w + left + right} on axis 3")

    if mode == "max":
        fill = np.array(-np.inf, dtype=x.array.dtype)
        padded = np.pad(x.array, ((0, 0), (0, 0), (top, bottom), (left, right)),
                        constant_values=fill)
        col = _im2col(padded, kh, kw, sh, sw, out_h, out_w)
        out = col.max(axis=(2, 3))
    else:
        padded = np.pad(x.array, ((0, 0), (0, 0), (top, bottom), (left, right)))
        col = _im2col(padded, kh, kw, sh, sw, out_h, out_w)
        sums = col.sum(axis=(2, 3))
        inside = np.zeros((1, 1, h + top + bottom, w + left + right), dtype=x.array.dtype)
        inside[:, :, top:top + h, left:left + w] = 1
        counts = _im2col(inside, kh, kw, sh, sw, out_h, out_w).sum(axis=(2, 3))
        out = sums / counts
    return Tensor(np.ascontiguousarray(out))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for rank-2 inputs."""
    if x.rank != 2:
        raise DimensionError(f"dense: input rank {x.rank} != 2")
    if weight.rank != 2:
        raise DimensionError(f"dense: weight rank {weight.rank} != 2")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"dense: input features {x.shape[1]} != weight rows {weight.shape[0]} on axis 1"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"dense: bias shape {bias.shape} != ({weight.shape[1]},) on axis 0"
        )
    return Tensor(x.array @ weight.array + bias.array)


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise relu/tanh, or softmax over the last axis.

    Softmax subtracts the row maximum before exponentiating, so rows sum to
    one without overflow for any finite input.
    """
    if kind == "relu":
        return Tensor(np.maximum(x.array, 0))
    if kind == "tanh":
        return Tensor(np.tanh(x.array))
    if kind == "softmax":
        shifted = x.array - x.array.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return Tensor(e / e.sum(axis=-1, keepdims=True))
    raise DimensionError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def batchnorm_infer(x: Tensor, gamma: Tensor, beta: Tensor, mean: Tensor,
                    var: Tensor, eps: float) -> Tensor:
    """Inference-mode batch normalisation over the channel axis (axis 1)."""
    if x.rank < 2:
        raise DimensionError(f"batchnorm: input rank {x.rank} < 2")
    channels = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if t.shape != (channels,):
            raise DimensionError(
                f"batchnorm: {name} shape {t.shape} != ({channels},) for axis 1"
            )
    if np.any(var.array < 0):
        raise ParameterError("batchnorm: variance has negative entries")
    bshape = (1, channels) + (1,) * (x.rank - 2)
    scale = (gamma.array / np.sqrt(var.array + DTYPES[x.dtype](eps))).reshape(bshape)
    shift = beta.array.reshape(bshape) - scale * mean.array.reshape(bshape)
    return Tensor(x.array * scale + shift)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; all other dims must agree exactly."""
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    first = tensors[0]
    if not 0 <= axis < first.rank:
        raise DimensionError(f"concat: axis {axis} out of range for rank {first.rank}")
    for i, t in enumerate(tensors[1:], start=1):
        if t.rank != first.rank:
            raise DimensionError(f"concat: tensor {i} rank {t.rank} != {first.rank}")
        if t.dtype != first.dtype:
            raise DimensionError(f"concat: tensor {i} dtype {t.dtype} != {first.dtype}")
        for ax in range(first.rank):
            if ax != axis and t.shape[ax] != first.shape[ax]:
                raise DimensionError(
                    f"concat: tensor {i} dim {t.shape[ax]} != {first.shape[ax]} on axis {ax}"
                )
    return Tensor(np.concatenate([t.array for t in tensors], axis=axis))
