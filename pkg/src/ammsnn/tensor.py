"""Minimal reverse-mode differentiable tensor engine.

Every differentiable operation appends a :class:`TapeNode` to the
thread-local tape.  :func:`backward` walks the tape in strict reverse
creation order, looking up each node's backward rule by its op tag in
:data:`BACKWARD_RULES`, then clears the tape.

All arithmetic is float64.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError, UsageError

__all__ = [
    "Tensor",
    "TapeNode",
    "Tape",
    "BACKWARD_RULES",
    "current_tape",
    "no_grad",
    "is_grad_enabled",
    "record",
    "register_backward",
    "ColumnGrad",
    "backward",
    "matmul",
    "transpose",
    "conv1d_same",
    "activation",
    "softmax_vec",
    "max_reduce",
    "hadamard_broadcast",
    "concat",
    "narrow",
    "pad_zeros",
    "add",
    "scale",
    "mul_const",
    "sum_all",
]

ROWS = "rows"
COLS = "cols"


class Tensor:
    """Dense float64 array with an accumulating gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # adopt a freshly computed float64 array without copying
        t = cls.__new__(cls)
        t.data = arr
        t.grad = np.zeros_like(arr)
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass(eq=False)
class TapeNode:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Dict[str, Any] = field(default_factory=dict)
    # distance of the forward point to the nearest nondifferentiable kink
    kink_gap: float = float("inf")


class Tape:
    """Append-only record of the operations of one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []

    def append(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def min_kink_gap(self) -> float:
        return min((n.kink_gap for n in self.nodes), default=float("inf"))


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on the tape."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


BackwardRule = Callable[[TapeNode, np.ndarray], Sequence[Optional[np.ndarray]]]
BACKWARD_RULES: Dict[str, BackwardRule] = {}


def register_backward(op: str):
    """Decorator registering ``fn(node, grad_out) -> input grads`` for an op tag."""

    def register(fn: BackwardRule) -> BackwardRule:
        BACKWARD_RULES[op] = fn
        return fn

    return register


_rule = register_backward


class ColumnGrad:
    """Gradient touching only some columns of a matrix input (embedding lookups)."""

    __slots__ = ("idx", "values")

    def __init__(self, idx: np.ndarray, values: np.ndarray):
        self.idx = idx
        self.values = values


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           saved: Optional[Dict[str, Any]] = None, kink_gap: float = float("inf")) -> Tensor:
    """Wrap ``out_data`` in a Tensor and tape the producing op if needed.

    Other modules use this to define their own differentiable primitives;
    the op tag must have a rule in :data:`BACKWARD_RULES`.
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericalError(f"{op}: non-finite value in forward output")
    track = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(out_data, dtype=np.float64), track)
    if track:
        if op not in BACKWARD_RULES:
            raise UsageError(f"no backward rule registered for op {op!r}")
        current_tape().append(TapeNode(op, tuple(inputs), out, saved or {}, kink_gap))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dTensor into ``.grad`` of every tracked tensor, then clear the tape."""
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    try:
        loss.grad += 1.0
        for node in reversed(tape.nodes):
            g = node.output.grad
            if not g.any():
                continue
            grads = BACKWARD_RULES[node.op](node, g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if isinstance(gi, ColumnGrad):
                    np.add.at(inp.grad.T, gi.idx, gi.values.T)
                else:
                    inp.grad += gi
    finally:
        tape.clear()


def _contig(a: np.ndarray) -> np.ndarray:
    # a fixed memory layout keeps BLAS results bit-reproducible
    return np.ascontiguousarray(a)


# ----------------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return record("matmul", (a, b), _contig(a.data) @ _contig(b.data))


@_rule("matmul")
def _matmul_backward(node, g):
    a, b = node.inputs
    return g @ b.data.T, a.data.T @ g


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return record("transpose", (a,), a.data.T.copy())


@_rule("transpose")
def _transpose_backward(node, g):
    return (g.T,)


def conv1d_same(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded 1-D convolution over the length axis.

    ``x`` is d x L, ``filters`` c x d x k with k odd, ``bias`` length c.
    Output is c x L with
    ``out[j, t] = sum_{i,s} filters[j, i, s] * xpad[i, t + s] + bias[j]``.
    """
    if filters.data.ndim != 3:
        raise DimensionError(f"conv1d_same: filters must be c x d x k, got {filters.shape}")
    c, d, k = filters.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same: filter width must be odd, got {k}")
    if x.data.ndim != 2 or x.shape[0] != d:
        raise DimensionError(f"conv1d_same: input {x.shape} does not match filters {filters.shape}")
    if bias.shape != (c,):
        raise DimensionError(f"conv1d_same: bias {bias.shape} does not match {c} channels")
    L = x.shape[1]
    pad = (k - 1) // 2
    xpad = np.pad(x.data, ((0, 0), (pad, pad)))
    # windows[t, i, s] = xpad[i, t + s]
    windows = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=1).transpose(1, 0, 2)
    cols = _contig(windows.reshape(L, d * k))
    wmat = _contig(filters.data.reshape(c, d * k))
    out = wmat @ cols.T + bias.data[:, None]
    return record("conv1d_same", (x, filters, bias), out, {"cols": cols, "k": k})


@_rule("conv1d_same")
def _conv1d_backward(node, g):
    x, filters, _ = node.inputs
    c, d, k = filters.shape
    L = x.shape[1]
    cols = node.saved["cols"]
    gw = (g @ cols).reshape(c, d, k)
    gb = g.sum(axis=1)
    gcols = (g.T @ filters.data.reshape(c, d * k)).reshape(L, d, k)
    pad = (k - 1) // 2
    gxpad = np.zeros((d, L + 2 * pad))
    for s in range(k):
        gxpad[:, s:s + L] += gcols[:, :, s].T
    return gxpad[:, pad:pad + L], gw, gb


_ACTIVATIONS = ("tanh", "relu", "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        out = np.tanh(x.data)
        gap = float("inf")
    elif kind == "relu":
        out = np.maximum(x.data, 0.0)
        gap = float(np.min(np.abs(x.data)))
    elif kind == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
        gap = float("inf")
    else:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {_ACTIVATIONS}")
    return record("activation", (x,), out, {"kind": kind, "out": out}, kink_gap=gap)


@_rule("activation")
def _activation_backward(node, g):
    kind, y = node.saved["kind"], node.saved["out"]
    if kind == "tanh":
        return (g * (1.0 - y * y),)
    if kind == "relu":
        return (g * (y > 0.0),)
    return (g * y * (1.0 - y),)


def softmax_vec(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise DimensionError(f"softmax_vec: expected a vector, got shape {x.shape}")
    e = np.exp(x.data - x.data.max())
    out = e / e.sum()
    return record("softmax_vec", (x,), out, {"out": out})


@_rule("softmax_vec")
def _softmax_backward(node, g):
    y = node.saved["out"]
    return (y * (g - np.dot(g, y)),)


def _top2_gap(x: np.ndarray) -> float:
    if x.shape[1] < 2:
        return float("inf")
    part = np.sort(x, axis=1)
    top, second = part[:, -1], part[:, -2]
    gaps = top - second
    # exact ties between zeros are relu floors; perturbations keep them tied at zero
    gaps = np.where((top == 0.0) & (second == 0.0), np.inf, gaps)
    return float(gaps.min())


def max_reduce(x: Tensor, axis: str = ROWS) -> Tuple[Tensor, np.ndarray]:
    """Maximum of every row (``axis="rows"``) or every column (``axis="cols"``).

    Returns the values and the first-occurrence argmax indices; backward
    routes the incoming gradient to the argmax cells only.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"max_reduce: expected a matrix, got shape {x.shape}")
    if axis == ROWS:
        m = x.data
    elif axis == COLS:
        m = x.data.T
    else:
        raise ConfigError(f"max_reduce: axis must be 'rows' or 'cols', got {axis!r}")
    idx = np.argmax(m, axis=1)
    vals = m[np.arange(m.shape[0]), idx]
    out = record("max_reduce", (x,), vals, {"axis": axis, "idx": idx}, kink_gap=_top2_gap(m))
    return out, idx


@_rule("max_reduce")
def _max_reduce_backward(node, g):
    (x,) = node.inputs
    idx = node.saved["idx"]
    gx = np.zeros_like(x.data)
    if node.saved["axis"] == ROWS:
        gx[np.arange(len(idx)), idx] = g
    else:
        gx[idx, np.arange(len(idx))] = g
    return (gx,)


def hadamard_broadcast(m: Tensor, v: Tensor) -> Tensor:
    """``out[i, j] = m[i, j] * v[j]``."""
    if m.data.ndim != 2 or v.data.ndim != 1 or v.shape[0] != m.shape[1]:
        raise DimensionError(f"hadamard_broadcast: vector {v.shape} does not match matrix {m.shape}")
    return record("hadamard", (m, v), m.data * v.data[None, :])


@_rule("hadamard")
def _hadamard_backward(node, g):
    m, v = node.inputs
    return g * v.data[None, :], (g * m.data).sum(axis=0)


def concat(*tensors: Tensor, axis: int = 0) -> Tensor:
    if len(tensors) < 1:
        raise UsageError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {[t.shape for t in tensors]}"
            )
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", tensors, out, {"axis": axis, "sizes": sizes})


@_rule("concat")
def _concat_backward(node, g):
    axis = node.saved["axis"]
    bounds = np.cumsum(node.saved["sizes"])[:-1]
    return np.split(g, bounds, axis=axis)


def narrow(x: Tensor, axis: int, length: int) -> Tensor:
    """Leading ``length`` entries of ``x`` along ``axis``."""
    if not 1 <= length <= x.shape[axis]:
        raise DimensionError(f"narrow: length {length} out of range for axis {axis} of {x.shape}")
    if length == x.shape[axis]:
        return x
    out = _contig(np.take(x.data, np.arange(length), axis=axis))
    return record("narrow", (x,), out, {"axis": axis, "length": length})


@_rule("narrow")
def _narrow_backward(node, g):
    (x,) = node.inputs
    gx = np.zeros_like(x.data)
    sl = [slice(None)] * x.data.ndim
    sl[node.saved["axis"]] = slice(0, node.saved["length"])
    gx[tuple(sl)] = g
    return (gx,)


def pad_zeros(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Embed ``x`` in the leading corner of a zero array of ``shape``."""
    if len(shape) != x.data.ndim or any(s < xs for s, xs in zip(shape, x.shape)):
        raise DimensionError(f"pad_zeros: cannot pad {x.shape} to {tuple(shape)}")
    if tuple(shape) == x.shape:
        return x
    out = np.zeros(shape)
    out[tuple(slice(0, n) for n in x.shape)] = x.data
    return record("pad_zeros", (x,), out)


@_rule("pad_zeros")
def _pad_zeros_backward(node, g):
    (x,) = node.inputs
    return (g[tuple(slice(0, n) for n in x.shape)],)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return record("add", (a, b), a.data + b.data)


@_rule("add")
def _add_backward(node, g):
    return g, g


def scale(x: Tensor, factor: float) -> Tensor:
    return record("scale", (x,), x.data * factor, {"factor": factor})


@_rule("scale")
def _scale_backward(node, g):
    return (g * node.saved["factor"],)


def mul_const(x: Tensor, mask: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (used for dropout masks)."""
    if mask.shape != x.shape:
        raise DimensionError(f"mul_const: mask {mask.shape} does not match {x.shape}")
    return record("mul_const", (x,), x.data * mask, {"mask": mask})


@_rule("mul_const")
def _mul_const_backward(node, g):
    return (g * node.saved["mask"],)


def sum_all(x: Tensor) -> Tensor:
    return record("sum_all", (x,), np.array(x.data.sum()))


@_rule("sum_all")
def _sum_all_backward(node, g):
    (x,) = node.inputs
    return (np.full_like(x.data, float(g)),)
