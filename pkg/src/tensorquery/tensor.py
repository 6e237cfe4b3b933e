"""Dense tensors and a reverse-mode differentiation tape.

Values live in flat row-major numpy buffers with one of four dtypes
(float64, float32, int64, bool).  Float results are recorded onto the
innermost active :class:`Tape`; ``backward`` replays the recorded nodes in
reverse to accumulate gradients.  Recording is off by default and enabled
per session, so plain (inference) execution pays no tape cost.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = ("float64", "float32")
DTYPES = ("float64", "float32", "int64", "bool")


class TensorError(ValueError):
    """Shape, dtype or tape misuse in a tensor operation."""


def _np_dtype(dtype: str) -> np.dtype:
    if dtype not in DTYPES:
        raise TensorError(f"unsupported dtype {dtype!r}; expected one of {DTYPES}")
    return np.dtype(dtype)


class TapeNode:
    """One recorded operation: its inputs and how to push a gradient back.

    ``vjps[i]`` maps the output gradient to the gradient contribution of
    ``parents[i]``; parents always precede the node on the tape.
    """

    __slots__ = ("op", "parents", "vjps", "tape")

    def __init__(self, op: str, parents: tuple, vjps: tuple, tape: "Tape"):
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.tape = tape


class Tensor:
    """Immutable dense array value, optionally attached to a tape node."""

    __slots__ = ("data", "node")

    def __init__(self, data: np.ndarray, node: Optional[TapeNode] = None):
        if data.dtype.name not in DTYPES:
            raise TensorError(f"unsupported dtype {data.dtype.name!r}")
        if node is not None and data.dtype.name not in FLOAT_DTYPES:
            raise TensorError("only float tensors may carry a tape node")
        self.data = np.asarray(data, order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return self.data.dtype.name

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() on tensor of size {self.data.size}")
        return self.data.reshape(()).item()

    def tolist(self):
        return self.data.tolist()

    def astype(self, dtype: str) -> "Tensor":
        """Dtype cast; breaks any gradient connection."""
        return Tensor(self.data.astype(_np_dtype(dtype)))

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype})"

    # Operator sugar; the free functions do the real work.
    def __add__(self, other):
        return add(self, _as_tensor_like(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor_like(other, self))

    def __mul__(self, other):
        return mul(self, _as_tensor_like(other, self))

    def __truediv__(self, other):
        return div(self, _as_tensor_like(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = ref.dtype if ref.dtype in FLOAT_DTYPES else "float64"
    return tensor(value, dtype=dtype)


# ---------------------------------------------------------------------------
# Tape / recording sessions
# ---------------------------------------------------------------------------

_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """A recording session.

    Nodes are appended in execution order, so inputs always precede their
    consumers.  ``gradients`` is filled by :func:`backward`.  A tape must be
    driven from a single thread; distinct tapes are independent.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.gradients: dict[TapeNode, np.ndarray] = {}
        # id(tensor) -> (leaf node, strong ref keeping the id stable)
        self._leaves: dict[int, tuple[TapeNode, Tensor]] = {}
        self._active = False

    def activate(self) -> "Tape":
        _tape_stack().append(self)
        self._active = True
        return self

    def deactivate(self) -> None:
        stack = _tape_stack()
        if self._active and self in stack:
            stack.remove(self)
        self._active = False

    def __enter__(self) -> "Tape":
        return self.activate()

    def __exit__(self, *exc) -> None:
        self.deactivate()

    def leaf_for(self, t: Tensor) -> TapeNode:
        """Node representing ``t`` on this tape, creating a leaf on first use."""
        if t.node is not None and t.node.tape is self:
            return t.node
        entry = self._leaves.get(id(t))
        if entry is not None:
            return entry[0]
        node = TapeNode("leaf", (), (), self)
        self.nodes.append(node)
        self._leaves[id(t)] = (node, t)
        return node

    def gradient(self, t: Tensor) -> Optional[Tensor]:
        """Gradient of the last backward() root w.r.t. ``t``, if reachable."""
        node = None
        if t.node is not None and t.node.tape is self:
            node = t.node
        else:
            entry = self._leaves.get(id(t))
            if entry is not None:
                node = entry[0]
        if node is None:
            return None
        g = self.gradients.get(node)
        return None if g is None else Tensor(g)


class no_recording:
    """Context that suspends recording (used by numeric gradient checks)."""

    def __enter__(self):
        stack = _tape_stack()
        self._saved = list(stack)
        stack.clear()
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.clear()
        stack.extend(self._saved)


class Parameter:
    """Named trainable tensor; uniqueness of names is enforced per registry."""

    __slots__ = ("name", "value", "requires_grad")

    def __init__(self, name: str, value: Tensor, requires_grad: bool = True):
        if value.dtype not in FLOAT_DTYPES:
            raise TensorError(f"parameter {name!r} must be float, got {value.dtype}")
        self.name = name
        self.value = value
        self.requires_grad = requires_grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={list(self.value.shape)})"


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _wrap_new(data: np.ndarray) -> Tensor:
    """Wrap freshly built data; float tensors become leaves while recording."""
    t = Tensor(data)
    tape = active_tape()
    if tape is not None and data.dtype.name in FLOAT_DTYPES:
        tape.leaf_for(t)
    return t


def tensor(values, dtype: str = "float64") -> Tensor:
    """Build a tensor from nested sequences / scalars / ndarray."""
    return _wrap_new(np.asarray(values, dtype=_np_dtype(dtype)))


def create(shape: Sequence[int], dtype: str, fill=None, data=None) -> Tensor:
    """Create a tensor of ``shape`` from a fill value or a flat data buffer."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise TensorError(f"negative extent in shape {list(shape)}")
    npdt = _np_dtype(dtype)
    if (fill is None) == (data is None):
        raise TensorError("exactly one of fill= or data= is required")
    if fill is not None:
        if dtype == "bool" and not isinstance(fill, (bool, np.bool_)):
            raise TensorError("bool fill value required for bool dtype")
        return _wrap_new(np.full(shape, fill, dtype=npdt))
    buf = np.asarray(data, dtype=npdt).reshape(-1)
    expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if buf.size != expected:
        raise TensorError(
            f"data length {buf.size} does not match shape {list(shape)} (expects {expected})"
        )
    return _wrap_new(buf.reshape(shape))


def zeros(shape: Sequence[int], dtype: str = "float64") -> Tensor:
    return create(shape, dtype, fill=False if dtype == "bool" else 0)


def ones(shape: Sequence[int], dtype: str = "float64") -> Tensor:
    return create(shape, dtype, fill=True if dtype == "bool" else 1)


# ---------------------------------------------------------------------------
# Recording helper
# ---------------------------------------------------------------------------


def _record(op: str, out: np.ndarray, inputs: Sequence[tuple]) -> Tensor:
    """Wrap an op result, recording a node when a session is active.

    ``inputs`` is a sequence of (tensor, vjp) pairs for the differentiable
    inputs; vjp maps the output gradient array to that input's gradient.
    """
    tape = active_tape()
    if tape is None or out.dtype.name not in FLOAT_DTYPES:
        return Tensor(out)
    parents = tuple(tape.leaf_for(t) for t, _ in inputs)
    vjps = tuple(vjp for _, vjp in inputs)
    node = TapeNode(op, parents, vjps, tape)
    tape.nodes.append(node)
    return Tensor(out, node)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that were stretched by broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _grad_like(grad: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return grad.astype(ref.dtype, copy=False)


def _check_float(op: str, *ts: Tensor) -> None:
    for t in ts:
        if t.dtype not in FLOAT_DTYPES:
            raise TensorError(f"{op} requires float input, got {t.dtype}")


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorError(
            f"{op}: shapes {list(a.shape)} and {list(b.shape)} are not broadcast-compatible"
        ) from None


# ---------------------------------------------------------------------------
# Elementwise kernels
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    out = a.data + b.data
    return _record(
        "add",
        out,
        [
            (a, lambda g, sa=a.shape, d=a.data: _grad_like(_unbroadcast(g, sa), d)),
            (b, lambda g, sb=b.shape, d=b.data: _grad_like(_unbroadcast(g, sb), d)),
        ],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    out = a.data - b.data
    return _record(
        "sub",
        out,
        [
            (a, lambda g, sa=a.shape, d=a.data: _grad_like(_unbroadcast(g, sa), d)),
            (b, lambda g, sb=b.shape, d=b.data: _grad_like(_unbroadcast(-g, sb), d)),
        ],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    out = a.data * b.data
    da, db = a.data, b.data
    return _record(
        "mul",
        out,
        [
            (a, lambda g: _grad_like(_unbroadcast(g * db, da.shape), da)),
            (b, lambda g: _grad_like(_unbroadcast(g * da, db.shape), db)),
        ],
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient; denominators are the caller's responsibility."""
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    da, db = a.data, b.data
    return _record(
        "div",
        out,
        [
            (a, lambda g: _grad_like(_unbroadcast(g / db, da.shape), da)),
            (b, lambda g: _grad_like(_unbroadcast(-g * da / (db * db), db.shape), db)),
        ],
    )


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, [(a, lambda g, d=a.data: _grad_like(-g, d))])


def log(a: Tensor) -> Tensor:
    _check_float("log", a)
    da = a.data
    return _record("log", np.log(da), [(a, lambda g: _grad_like(g / da, da))])


def exp(a: Tensor) -> Tensor:
    _check_float("exp", a)
    out = np.exp(a.data)
    return _record("exp", out, [(a, lambda g, d=a.data: _grad_like(g * out, d))])


def square(a: Tensor) -> Tensor:
    da = a.data
    return _record("square", da * da, [(a, lambda g: _grad_like(g * 2.0 * da, da))])


def relu(a: Tensor) -> Tensor:
    """Rectifier used as the hidden activation of embedded models."""
    _check_float("relu", a)
    da = a.data
    mask = da > 0
    return _record("relu", np.where(mask, da, 0.0).astype(da.dtype),
                   [(a, lambda g: _grad_like(g * mask, da))])


_ELEMENTWISE_UNARY = {"neg": neg, "log": log, "exp": exp, "square": square}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch by op name: add/sub/mul/div (binary), neg/log/exp/square (unary)."""
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise TensorError(f"{op} requires two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        if b is not None:
            raise TensorError(f"{op} takes a single operand")
        return _ELEMENTWISE_UNARY[op](a)
    raise TensorError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# Linear algebra / reductions
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_float("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise TensorError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise TensorError(
            f"matmul: inner dimensions differ ({a.shape[1]} vs {b.shape[0]})"
        )
    da, db = a.data, b.data
    out = da @ db
    return _record(
        "matmul",
        out,
        [
            (a, lambda g: _grad_like(g @ db.T, da)),
            (b, lambda g: _grad_like(da.T @ g, db)),
        ],
    )


def _check_axis(a: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise TensorError(f"axis {axis} out of range for shape {list(a.shape)}")


def _expand_reduced(g: np.ndarray, shape: tuple, axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    _check_axis(a, axis)
    da = a.data
    out = da.sum(axis=axis, keepdims=keepdims)
    vjp = lambda g: _grad_like(_expand_reduced(g, da.shape, axis, keepdims).copy(), da)
    return _record("sum", np.asarray(out), [(a, vjp)])


def reduce_mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    _check_axis(a, axis)
    da = a.data
    count = da.size if axis is None else da.shape[axis]
    out = da.mean(axis=axis, keepdims=keepdims)
    vjp = lambda g: _grad_like(
        _expand_reduced(g, da.shape, axis, keepdims) / count, da
    )
    return _record("mean", np.asarray(out), [(a, vjp)])


def reduce_max(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Max reduction; the backward routes the gradient to the first argmax."""
    _check_axis(a, axis)
    da = a.data
    out = da.max(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(da)
        if axis is None:
            grad.reshape(-1)[int(da.argmax())] = g.reshape(()).item()
            return grad
        idx = np.expand_dims(da.argmax(axis=axis), axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, idx, gg, axis=axis)
        return grad

    return _record("max", np.asarray(out), [(a, vjp)])


def reduce(op: str, a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    fns = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}
    if op not in fns:
        raise TensorError(f"unknown reduction {op!r}")
    return fns[op](a, axis=axis, keepdims=keepdims)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max-subtraction for stability."""
    _check_float("softmax", logits)
    da = logits.data
    shifted = da - da.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> np.ndarray:
        inner = (g * out).sum(axis=axis, keepdims=True)
        return _grad_like(out * (g - inner), da)

    return _record("softmax", out, [(logits, vjp)])


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    da = a.data
    try:
        out = da.reshape(shape)
    except ValueError:
        raise TensorError(
            f"cannot reshape {list(a.shape)} ({da.size} elements) into {list(shape)}"
        ) from None
    return _record("reshape", out.copy(), [(a, lambda g: g.reshape(da.shape))])


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    da = a.data
    perm = tuple(axes) if axes is not None else tuple(reversed(range(da.ndim)))
    if sorted(perm) != list(range(da.ndim)):
        raise TensorError(f"invalid axes permutation {list(perm)} for ndim {da.ndim}")
    inv = np.argsort(perm)
    out = np.ascontiguousarray(da.transpose(perm))
    return _record("transpose", out, [(a, lambda g: g.transpose(inv))])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise TensorError("concat of zero tensors")
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as e:
        raise TensorError(f"concat: {e}") from None
    sizes = [arr.shape[axis] for arr in arrays]
    offsets = np.cumsum([0] + sizes)
    inputs = []
    for i, t in enumerate(tensors):
        def vjp(g, lo=offsets[i], hi=offsets[i + 1], d=arrays[i]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return _grad_like(g[tuple(sl)], d)
        inputs.append((t, vjp))
    return _record("concat", out, inputs)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    da = a.data
    _check_axis(a, axis)
    extent = da.shape[axis]
    if not (0 <= start <= stop <= extent):
        raise TensorError(
            f"slice [{start}:{stop}] out of bounds for extent {extent} on axis {axis}"
        )
    sl = [slice(None)] * da.ndim
    sl[axis] = slice(start, stop)
    out = da[tuple(sl)].copy()

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(da)
        grad[tuple(sl)] = g
        return grad

    return _record("slice", out, [(a, vjp)])


def gather(a: Tensor, index: Tensor, axis: int = 0) -> Tensor:
    """Select positions along ``axis``; differentiable w.r.t. ``a`` only."""
    if index.dtype != "int64":
        raise TensorError("gather index must be int64")
    da = a.data
    _check_axis(a, axis)
    idx = index.data
    extent = da.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= extent):
        raise TensorError(f"gather index out of range [0, {extent})")
    out = np.take(da, idx, axis=axis)

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(da)
        np.add.at(grad, (slice(None),) * axis + (idx,), g)
        return grad

    return _record("gather", out, [(a, vjp)])


def one_hot(codes: Tensor, num_classes: int, dtype: str = "float64") -> Tensor:
    """Float one-hot rows for int64 codes in [0, num_classes)."""
    if codes.dtype != "int64":
        raise TensorError("one_hot codes must be int64")
    if codes.data.ndim != 1:
        raise TensorError("one_hot expects a 1-d code vector")
    c = codes.data
    if c.size and (c.min() < 0 or c.max() >= num_classes):
        raise TensorError(f"one_hot code out of range [0, {num_classes})")
    out = np.zeros((c.size, num_classes), dtype=_np_dtype(dtype))
    out[np.arange(c.size), c] = 1
    # Not differentiable w.r.t. integer codes; still a leaf while recording.
    return _wrap_new(out)


# ---------------------------------------------------------------------------
# Backward and gradient checking
# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Reverse sweep from a scalar root, accumulating into its tape."""
    if root.node is None:
        raise TensorError("backward root is not tape-tracked")
    if root.shape != ():
        raise TensorError(f"backward root must be scalar, got shape {list(root.shape)}")
    tape = root.node.tape

    # Iterative post-order over the subgraph reachable from root.
    topo: list[TapeNode] = []
    seen: set[int] = set()
    stack: list[tuple[TapeNode, bool]] = [(root.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root.node): np.ones((), dtype=root.data.dtype)}
    by_id = {id(n): n for n in topo}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    tape.gradients.update({by_id[k]: v for k, v in grads.items()})


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be a scalar-valued pure function of ``x``; the numeric side
    re-evaluates ``f`` with recording suspended so it is independent of the
    backward implementation.
    """
    if x.dtype != "float64":
        raise TensorError("grad_check requires float64 input")
    with Tape() as tape:
        y = f(x)
        if y.shape != ():
            raise TensorError("grad_check requires a scalar-valued function")
        backward(y)
        got = tape.gradient(x)
    analytic = np.zeros_like(x.data) if got is None else got.data

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_recording():
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + eps
            hi = f(Tensor(bumped.reshape(x.shape))).item()
            bumped[i] = flat[i] - eps
            lo = f(Tensor(bumped.reshape(x.shape))).item()
            numeric.reshape(-1)[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
