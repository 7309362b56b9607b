"""
Tensor engine: immutable n-dimensional arrays, a recording tape and
reverse-mode differentiation over a small primitive set.

Every primitive is a (forward, backward) pair over numpy arrays registered in
``PRIMITIVES``. ``forward_primitive`` validates shapes, checks finiteness and
records the application on the active ``Tape`` when any input requires grad.
"""
import contextlib
import contextvars
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ContractError, NumericError, ShapeError, StateError

logger = logging.getLogger(__name__)

_DTYPE: contextvars.ContextVar = contextvars.ContextVar("simcl_dtype", default=np.float32)
_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("simcl_tape", default=None)
_NODE_IDS = itertools.count(1)

# Batch-norm constants
BN_MOMENTUM = 0.9
BN_EPS = 1e-5

# Norm floor for l2_normalize_rows on an all-zero row
L2_FLOOR = 1e-12


def default_dtype() -> type:
    """Floating type used for newly created tensors (float32 unless in shadow mode)."""
    return _DTYPE.get()


@contextlib.contextmanager
def shadow_precision() -> Iterator[None]:
    """Create tensors in float64 for the duration of the block (oracle tests)."""
    token = _DTYPE.set(np.float64)
    try:
        yield
    finally:
        _DTYPE.reset(token)


def _check_finite(array: np.ndarray, where: str) -> None:
    if array.size and not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite value in {where}")


class Tensor:
    """Immutable array value; ``node_id`` identifies it on a Tape."""

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data: Any, requires_grad: bool = False):
        array = np.array(data, dtype=default_dtype())
        _check_finite(array, "tensor creation")
        array.flags.writeable = False
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_NODE_IDS)

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        tensor = cls.__new__(cls)
        array = np.asarray(array)
        if not array.flags.c_contiguous:
            array = array.copy(order="C")
        array.flags.writeable = False
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.node_id = next(_NODE_IDS)
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, tensor has {self.size}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, no gradient tracking."""
        return Tensor._wrap(self.data, requires_grad=False)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}, node_id={self.node_id})"


def tensor_from(shape: Sequence[int], values: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat row-major value list."""
    extents = [int(s) for s in shape]
    if any(s < 0 for s in extents):
        raise ShapeError(f"negative extent in shape {extents}")
    expected = int(np.prod(extents, dtype=np.int64)) if extents else 1
    flat = np.asarray(list(values), dtype=np.float64)
    if flat.size != expected:
        raise ShapeError(f"shape {extents} needs {expected} values, got {flat.size}")
    return Tensor(flat.reshape(extents), requires_grad=requires_grad)


def constant(array: Any) -> Tensor:
    return Tensor(array, requires_grad=False)


@dataclass
class TapeRecord:
    """One recorded primitive application."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Dict[str, Any]
    attrs: Dict[str, Any]


class Tape:
    """Ordered log of primitive applications for one forward pass.

    Used as a context manager: primitives applied inside the block are
    recorded on it. A tape supports one backward pass until ``reset``.
    """

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []
        self._consumed = False
        self._tokens: List[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc: Any) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, rec: TapeRecord) -> None:
        if self._consumed:
            raise StateError("tape already used for a backward pass; call reset() before recording")
        self.records.append(rec)

    def reset(self) -> None:
        self.records = []
        self._consumed = False

    def leaves(self) -> List[Tensor]:
        """Grad-requiring inputs not produced by any record, in first-use order."""
        produced = {rec.output.node_id for rec in self.records}
        seen = set()
        result = []
        for rec in self.records:
            for tensor in rec.inputs:
                if tensor.requires_grad and tensor.node_id not in produced and tensor.node_id not in seen:
                    seen.add(tensor.node_id)
                    result.append(tensor)
        return result


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


# Primitive kernels
#
# forward(arrays, attrs) -> (output, saved)
# backward(grad_out, arrays, output, saved, attrs) -> list of input grads (None = no grad)

class Primitive(NamedTuple):
    forward: Callable[[List[np.ndarray], Dict[str, Any]], Tuple[np.ndarray, Dict[str, Any]]]
    backward: Callable[..., List[Optional[np.ndarray]]]
    min_inputs: int
    max_inputs: int


def _add_fwd(arrays, attrs):
    a, b = arrays
    if a.shape == b.shape:
        return a + b, {"bias": False}
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return a + b[None, :], {"bias": True}
    raise ShapeError(f"add: shapes {list(a.shape)} and {list(b.shape)} do not conform")


def _add_bwd(g, arrays, out, saved, attrs):
    return [g, g.sum(axis=0) if saved["bias"] else g]


def _mul_fwd(arrays, attrs):
    a, b = arrays
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {list(a.shape)} and {list(b.shape)} differ")
    return a * b, {}


def _mul_bwd(g, arrays, out, saved, attrs):
    a, b = arrays
    return [g * b, g * a]


def _matmul_fwd(arrays, attrs):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    return a @ b, {}


def _matmul_bwd(g, arrays, out, saved, attrs):
    a, b = arrays
    return [g @ b.T, a.T @ g]


def _transpose_fwd(arrays, attrs):
    (a,) = arrays
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got rank {a.ndim}")
    return a.T, {}


def _transpose_bwd(g, arrays, out, saved, attrs):
    return [g.T]


def _scale_fwd(arrays, attrs):
    (a,) = arrays
    return a * a.dtype.type(attrs["factor"]), {}


def _scale_bwd(g, arrays, out, saved, attrs):
    return [g * g.dtype.type(attrs["factor"])]


def _conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _conv2d_fwd(arrays, attrs):
    x, w = arrays
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("padding", 0))
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected N×C×H×W input and O×C×k×k kernel, got {list(x.shape)} and {list(w.shape)}")
    n, c, h, wd = x.shape
    o, kc, k, k2 = w.shape
    if kc != c or k != k2:
        raise ShapeError(f"conv2d: kernel {list(w.shape)} does not fit input channels {c}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} or padding {pad}")
    ho, wo = _conv_out_extent(h, k, stride, pad), _conv_out_extent(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(o, c * k * k).T
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return out, {"cols": cols, "out_hw": (ho, wo), "stride": stride, "pad": pad}


def _conv2d_bwd(g, arrays, out, saved, attrs):
    x, w = arrays
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = saved["out_hw"]
    stride, pad = saved["stride"], saved["pad"]
    g_mat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    grad_w = (g_mat.T @ saved["cols"]).reshape(w.shape)
    grad_cols = (g_mat @ w.reshape(o, c * k * k)).reshape(n, ho, wo, c, k, k)
    grad_xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            grad_xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                grad_cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    grad_x = grad_xp[:, :, pad : pad + h, pad : pad + wd] if pad else grad_xp
    return [grad_x, grad_w]


def _max_pool2_fwd(arrays, attrs):
    (x,) = arrays
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"max_pool2: expected N×C×H×W with even H and W, got {list(x.shape)}")
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. row-major tie-breaking inside the window
    index = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return out, {"index": index}


def _max_pool2_bwd(g, arrays, out, saved, attrs):
    (x,) = arrays
    n, c, h, w = x.shape
    grad_windows = np.zeros((n, c, h // 2, w // 2, 4), dtype=x.dtype)
    np.put_along_axis(grad_windows, saved["index"][..., None], g[..., None], axis=-1)
    grad = grad_windows.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return [grad]


def _avg_pool_global_fwd(arrays, attrs):
    (x,) = arrays
    if x.ndim != 4 or x.shape[2] * x.shape[3] == 0:
        raise ShapeError(f"avg_pool_global: expected non-empty N×C×H×W, got {list(x.shape)}")
    return x.mean(axis=(2, 3)), {}


def _avg_pool_global_bwd(g, arrays, out, saved, attrs):
    (x,) = arrays
    area = x.shape[2] * x.shape[3]
    grad = np.broadcast_to((g / x.dtype.type(area))[:, :, None, None], x.shape).copy()
    return [grad]


def _relu_fwd(arrays, attrs):
    (x,) = arrays
    return np.where(x > 0, x, x.dtype.type(0)), {}


def _relu_bwd(g, arrays, out, saved, attrs):
    (x,) = arrays
    # subgradient at exactly 0 is 0
    return [np.where(x > 0, g, g.dtype.type(0))]


@dataclass
class BatchNormStats:
    """Running per-channel statistics used in evaluation mode."""
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormStats":
        return cls(np.zeros(channels, dtype=np.float32), np.ones(channels, dtype=np.float32))

    def copy(self) -> "BatchNormStats":
        return BatchNormStats(self.running_mean.copy(), self.running_var.copy())


def _bn_axes(x: np.ndarray) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeError(f"batch_norm: expected N×C or N×C×H×W input, got {list(x.shape)}")


def _batch_norm_fwd(arrays, attrs):
    x, gamma, beta = arrays
    axes, param_shape = _bn_axes(x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: scale/shift must have shape [{channels}]")
    eps = x.dtype.type(attrs.get("eps", BN_EPS))
    stats: Optional[BatchNormStats] = attrs.get("stats")
    if attrs.get("training", False):
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if stats is not None:
            momentum = attrs.get("momentum", BN_MOMENTUM)
            stats.running_mean = (momentum * stats.running_mean + (1 - momentum) * mean).astype(np.float32)
            stats.running_var = (momentum * stats.running_var + (1 - momentum) * var).astype(np.float32)
    else:
        if stats is None:
            raise ContractError("batch_norm in evaluation mode needs running statistics")
        mean = stats.running_mean.astype(x.dtype)
        var = stats.running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = (x - mean.reshape(param_shape)) * inv_std.reshape(param_shape)
    out = gamma.reshape(param_shape) * x_hat + beta.reshape(param_shape)
    return out, {"x_hat": x_hat, "inv_std": inv_std, "training": bool(attrs.get("training", False))}


def _batch_norm_bwd(g, arrays, out, saved, attrs):
    x, gamma, beta = arrays
    axes, param_shape = _bn_axes(x)
    x_hat, inv_std = saved["x_hat"], saved["inv_std"]
    grad_gamma = (g * x_hat).sum(axis=axes)
    grad_beta = g.sum(axis=axes)
    grad_xhat = g * gamma.reshape(param_shape)
    if saved["training"]:
        count = x.dtype.type(x.size // x.shape[1])
        grad_x = (inv_std.reshape(param_shape) / count) * (
            count * grad_xhat
            - grad_xhat.sum(axis=axes).reshape(param_shape)
            - x_hat * (grad_xhat * x_hat).sum(axis=axes).reshape(param_shape)
        )
    else:
        grad_x = grad_xhat * inv_std.reshape(param_shape)
    return [grad_x, grad_gamma, grad_beta]


def _l2_normalize_rows_fwd(arrays, attrs):
    (x,) = arrays
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected a matrix, got {list(x.shape)}")
    norms = np.maximum(np.sqrt((x * x).sum(axis=1, keepdims=True)), x.dtype.type(L2_FLOOR))
    return x / norms, {"norms": norms}


def _l2_normalize_rows_bwd(g, arrays, out, saved, attrs):
    y = out
    norms = saved["norms"]
    return [(g - y * (g * y).sum(axis=1, keepdims=True)) / norms]


def log_softmax_rows_np(x: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction; shared with loss constants."""
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _log_softmax_rows_fwd(arrays, attrs):
    (x,) = arrays
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"log_softmax_rows: expected a matrix with at least one column, got {list(x.shape)}")
    return log_softmax_rows_np(x), {}


def _log_softmax_rows_bwd(g, arrays, out, saved, attrs):
    return [g - np.exp(out) * g.sum(axis=1, keepdims=True)]


def _mean_all_fwd(arrays, attrs):
    (x,) = arrays
    if x.size == 0:
        raise ShapeError("mean_all: empty tensor")
    return np.asarray(x.mean(), dtype=x.dtype), {}


def _mean_all_bwd(g, arrays, out, saved, attrs):
    (x,) = arrays
    return [np.full(x.shape, g / x.dtype.type(x.size), dtype=x.dtype)]


def _reshape_fwd(arrays, attrs):
    (x,) = arrays
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {list(x.shape)} as {list(shape)}")
    return x.reshape(shape), {}


def _reshape_bwd(g, arrays, out, saved, attrs):
    (x,) = arrays
    return [g.reshape(x.shape)]


def _concat_rows_fwd(arrays, attrs):
    trailing = arrays[0].shape[1:]
    for a in arrays:
        if a.ndim == 0 or a.shape[1:] != trailing:
            raise ShapeError(f"concat_rows: trailing extents differ ({list(a.shape)} vs {list(trailing)})")
    return np.concatenate(arrays, axis=0), {"rows": [a.shape[0] for a in arrays]}


def _concat_rows_bwd(g, arrays, out, saved, attrs):
    bounds = np.cumsum(saved["rows"])[:-1]
    return list(np.split(g, bounds, axis=0))


PRIMITIVES: Dict[str, Primitive] = {
    "add": Primitive(_add_fwd, _add_bwd, 2, 2),
    "mul": Primitive(_mul_fwd, _mul_bwd, 2, 2),
    "matmul": Primitive(_matmul_fwd, _matmul_bwd, 2, 2),
    "transpose": Primitive(_transpose_fwd, _transpose_bwd, 1, 1),
    "scale": Primitive(_scale_fwd, _scale_bwd, 1, 1),
    "conv2d": Primitive(_conv2d_fwd, _conv2d_bwd, 2, 2),
    "max_pool2": Primitive(_max_pool2_fwd, _max_pool2_bwd, 1, 1),
    "avg_pool_global": Primitive(_avg_pool_global_fwd, _avg_pool_global_bwd, 1, 1),
    "relu": Primitive(_relu_fwd, _relu_bwd, 1, 1),
    "batch_norm": Primitive(_batch_norm_fwd, _batch_norm_bwd, 3, 3),
    "l2_normalize_rows": Primitive(_l2_normalize_rows_fwd, _l2_normalize_rows_bwd, 1, 1),
    "log_softmax_rows": Primitive(_log_softmax_rows_fwd, _log_softmax_rows_bwd, 1, 1),
    "mean_all": Primitive(_mean_all_fwd, _mean_all_bwd, 1, 1),
    "reshape": Primitive(_reshape_fwd, _reshape_bwd, 1, 1),
    "concat_rows": Primitive(_concat_rows_fwd, _concat_rows_bwd, 1, 1_000_000),
}


def forward_primitive(op: str, inputs: Sequence[Tensor], attrs: Optional[Dict[str, Any]] = None) -> Tensor:
    """Apply a primitive, recording it on the active tape when any input requires grad."""
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise ContractError(f"unknown primitive '{op}'")
    if not prim.min_inputs <= len(inputs) <= prim.max_inputs:
        raise ContractError(f"{op} takes {prim.min_inputs}..{prim.max_inputs} inputs, got {len(inputs)}")
    attrs = dict(attrs or {})
    arrays = [t.data for t in inputs]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out, saved = prim.forward(arrays, attrs)
    out = np.asarray(out, dtype=np.result_type(*arrays))
    _check_finite(out, op)
    requires_grad = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=requires_grad)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(TapeRecord(op, tuple(inputs), result, saved, attrs))
    return result


def backward(loss: Tensor, tape: Tape, wrt: Optional[Iterable[Tensor]] = None) -> Dict[int, Tensor]:
    """Reverse pass over ``tape`` from the scalar ``loss``.

    Returns a map node_id -> gradient Tensor covering every grad-requiring
    leaf on the tape plus any tensors in ``wrt``; leaves the loss does not
    depend on get zero gradients of matching shape.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if tape.consumed:
        raise StateError("tape already used for a backward pass; call reset() first")
    leaves = tape.leaves()
    produced = {rec.output.node_id for rec in tape.records}
    if loss.node_id not in produced and loss.node_id not in {t.node_id for t in leaves}:
        raise ContractError("loss was not recorded on this tape")
    tape._consumed = True

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=loss.data.dtype)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.node_id, None)
        if g is None:
            continue
        prim = PRIMITIVES[rec.op]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            input_grads = prim.backward(g, [t.data for t in rec.inputs], rec.output.data, rec.saved, rec.attrs)
        for tensor, grad in zip(rec.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            current = grads.get(tensor.node_id)
            grads[tensor.node_id] = grad if current is None else current + grad

    targets = list(leaves)
    if wrt is not None:
        known = {t.node_id for t in targets}
        targets.extend(t for t in wrt if t.node_id not in known)
    result: Dict[int, Tensor] = {}
    for leaf in targets:
        grad = grads.get(leaf.node_id)
        if grad is None:
            grad = np.zeros(leaf.shape, dtype=leaf.data.dtype)
        _check_finite(grad, f"gradient of node {leaf.node_id}")
        result[leaf.node_id] = Tensor._wrap(np.asarray(grad, dtype=leaf.data.dtype).reshape(leaf.shape), requires_grad=False)
    return result


# Convenience wrappers

def add(a: Tensor, b: Tensor) -> Tensor:
    return forward_primitive("add", [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return forward_primitive("mul", [a, b])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward_primitive("matmul", [a, b])


def transpose(a: Tensor) -> Tensor:
    return forward_primitive("transpose", [a])


def scale(a: Tensor, factor: float) -> Tensor:
    return forward_primitive("scale", [a], {"factor": float(factor)})


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return forward_primitive("conv2d", [x, w], {"stride": stride, "padding": padding})


def max_pool2(x: Tensor) -> Tensor:
    return forward_primitive("max_pool2", [x])


def avg_pool_global(x: Tensor) -> Tensor:
    return forward_primitive("avg_pool_global", [x])


def relu(x: Tensor) -> Tensor:
    return forward_primitive("relu", [x])


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    stats: Optional[BatchNormStats] = None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    attrs = {"training": training, "stats": stats, "momentum": momentum, "eps": eps}
    return forward_primitive("batch_norm", [x, gamma, beta], attrs)


def l2_normalize_rows(x: Tensor) -> Tensor:
    return forward_primitive("l2_normalize_rows", [x])


def log_softmax_rows(x: Tensor) -> Tensor:
    return forward_primitive("log_softmax_rows", [x])


def mean_all(x: Tensor) -> Tensor:
    return forward_primitive("mean_all", [x])


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return forward_primitive("reshape", [x], {"shape": list(shape)})


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return forward_primitive("concat_rows", list(tensors))
