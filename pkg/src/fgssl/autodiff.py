"""Dense float64 tensors with reverse-mode differentiation and SGD.

The op set is small but closed over everything the attention layers and
training objectives need: dense matrix algebra, a few activations, row-wise
and segment-wise softmax (for attention over ragged neighborhoods), and
deterministic scatter/gather. Every op validates that its output is finite
and fails fast otherwise.

Reduction order is sequential everywhere (np.add.at / reduceat), so runs
are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NumericsError",
    "Tensor",
    "as_tensor",
    "backward",
    "zero_grad",
    "SgdState",
    "sgd_step",
    "grad_check",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "reshape",
    "leaky_relu",
    "elu",
    "exp",
    "log",
    "row_softmax",
    "row_log_softmax",
    "segment_softmax",
    "segment_log_softmax",
    "segment_sum",
    "row_sum",
    "row_dot",
    "row_l2_normalize",
    "reduce_sum",
    "reduce_mean",
    "dot",
]


class NumericsError(ArithmeticError):
    """A tensor operation produced (or was fed) a non-finite value."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values in output of '{op}'")


class Tensor:
    """A dense float64 array plus an optional gradient accumulator.

    Intermediate tensors remember their parents and a backward closure;
    constants (nothing upstream requires a gradient) carry neither, so
    inference-only forward passes build no graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # small amount of operator sugar; everything routes through the op functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad for every reachable parameter.

    The tape is replayed once in reverse topological order; running backward
    twice from the same root is an error (rebuild the graph instead).
    """
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.data.shape}")
    if root._consumed:
        raise RuntimeError("backward already ran from this root; rebuild the graph before differentiating again")
    root._consumed = True
    if not root.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), bwd, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = a.data * c

    def bwd(g):
        _accum(a, g * c)

    return _result(out, (a,), bwd, "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out, (a, b), bwd, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), bwd, "transpose")


def concat_rows(tensors) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=0)
    offsets = np.cumsum([0] + [t.data.shape[0] for t in ts])

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            _accum(t, g[lo:hi])

    return _result(out, tuple(ts), bwd, "concat_rows")


def concat_cols(tensors) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=1)
    offsets = np.cumsum([0] + [t.data.shape[1] for t in ts])

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            _accum(t, g[:, lo:hi])

    return _result(out, tuple(ts), bwd, "concat_cols")


def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"gather_rows index out of range for {a.data.shape[0]} rows")
    out = a.data[idx]

    def bwd(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _result(out, (a,), bwd, "gather_rows")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape).copy()

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(out, (a,), bwd, "reshape")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.where(x > 0, x, slope * x)

    def bwd(g):
        _accum(a, g * np.where(x > 0, 1.0, slope))

    return _result(out, (a,), bwd, "leaky_relu")


def elu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    def bwd(g):
        _accum(a, g * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0))))

    return _result(out, (a,), bwd, "elu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite(out, "exp")

    def bwd(g):
        _accum(a, g * out)

    return _result(out, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericsError("log of a non-positive value")
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _result(out, (a,), bwd, "log")


# ---------------------------------------------------------------------------
# softmax family (row max subtracted before exp)
# ---------------------------------------------------------------------------


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accum(a, out * (g - inner))

    return _result(out, (a,), bwd, "row_softmax")


def row_log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=1, keepdims=True))

    return _result(out, (a,), bwd, "row_log_softmax")


def _segment_bounds(segments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and per-element run lengths for sorted segment ids."""
    segments = np.asarray(segments)
    if segments.ndim != 1:
        raise ValueError("segment ids must be 1-D")
    if segments.size and np.any(np.diff(segments) < 0):
        raise ValueError("segment ids must be sorted non-decreasing")
    starts = np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]]) if segments.size else np.empty(0, np.int64)
    counts = np.diff(np.r_[starts, segments.size])
    return starts, counts


def segment_softmax(values, segments) -> Tensor:
    """Softmax within each run of equal, sorted segment ids (1-D values)."""
    v = as_tensor(values)
    if v.data.ndim != 1:
        raise ValueError("segment_softmax expects 1-D values")
    segs = np.asarray(segments, dtype=np.int64)
    if segs.shape != v.data.shape:
        raise ValueError("values and segment ids must have the same length")
    starts, counts = _segment_bounds(segs)
    seg_max = np.repeat(np.maximum.reduceat(v.data, starts), counts) if v.data.size else v.data
    e = np.exp(v.data - seg_max)
    denom = np.repeat(np.add.reduceat(e, starts), counts) if v.data.size else e
    out = e / denom

    def bwd(g):
        inner = np.repeat(np.add.reduceat(g * out, starts), counts)
        _accum(v, out * (g - inner))

    return _result(out, (v,), bwd, "segment_softmax")


def segment_log_softmax(values, segments) -> Tensor:
    v = as_tensor(values)
    if v.data.ndim != 1:
        raise ValueError("segment_log_softmax expects 1-D values")
    segs = np.asarray(segments, dtype=np.int64)
    starts, counts = _segment_bounds(segs)
    seg_max = np.repeat(np.maximum.reduceat(v.data, starts), counts) if v.data.size else v.data
    shifted = v.data - seg_max
    lse = np.repeat(np.log(np.add.reduceat(np.exp(shifted), starts)), counts) if v.data.size else shifted
    out = shifted - lse
    soft = np.exp(out)

    def bwd(g):
        seg_g = np.repeat(np.add.reduceat(g, starts), counts)
        _accum(v, g - soft * seg_g)

    return _result(out, (v,), bwd, "segment_log_softmax")


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows (or scalars) of `a` into `num_segments` buckets, in index order."""
    a = as_tensor(a)
    segs = np.asarray(segments, dtype=np.int64)
    if segs.shape[0] != a.data.shape[0]:
        raise ValueError("segment ids must match the leading dimension")
    out_shape = (num_segments,) + a.data.shape[1:]
    out = np.zeros(out_shape)
    np.add.at(out, segs, a.data)

    def bwd(g):
        _accum(a, g[segs])

    return _result(out, (a,), bwd, "segment_sum")


# ---------------------------------------------------------------------------
# reductions and friends
# ---------------------------------------------------------------------------


def row_sum(a) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=1, keepdims=True)

    def bwd(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _result(out, (a,), bwd, "row_sum")


def row_dot(a, b) -> Tensor:
    """Per-row inner product of two equally shaped matrices -> 1-D vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"row_dot shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = (a.data * b.data).sum(axis=1)

    def bwd(g):
        _accum(a, g[:, None] * b.data)
        _accum(b, g[:, None] * a.data)

    return _result(out, (a, b), bwd, "row_dot")


def row_l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm; norms are clamped below at eps."""
    a = as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    clamped = np.maximum(norms, eps)
    out = a.data / clamped

    def bwd(g):
        unclamped = norms > eps
        # where clamped: y = x / eps, plain scaling
        grad = g / clamped
        # where not clamped: subtract the radial component
        radial = (g * out).sum(axis=1, keepdims=True) * out / clamped
        _accum(a, np.where(unclamped, grad - radial, grad))

    return _result(out, (a,), bwd, "row_l2_normalize")


def reduce_sum(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())

    def bwd(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy() if a.data.shape else g)

    return _result(out, (a,), bwd, "reduce_sum")


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(reduce_sum(a), 1.0 / a.data.size)


def dot(a, b) -> Tensor:
    """Full inner product (sum of elementwise products) -> scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"dot shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = np.asarray((a.data * b.data).sum())

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out, (a, b), bwd, "dot")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class SgdState:
    """SGD with classic momentum; weight decay is folded into the gradient."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocities: list = field(default_factory=list)

    def ensure(self, params) -> None:
        if not self.velocities:
            self.velocities = [np.zeros_like(p.data) for p in params]

    def reset_velocity(self) -> None:
        for v in self.velocities:
            v[...] = 0.0


def sgd_step(params, grads, state: SgdState) -> None:
    """g' = g + wd*theta;  v <- momentum*v + g';  theta <- theta - lr*v."""
    state.ensure(params)
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise ValueError("params, grads and velocities must align")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise NumericsError(f"parameter {i} has no gradient")
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter {i} (|g|max={np.abs(g[np.isfinite(g)]).max(initial=0.0):g})")
        g = g + state.weight_decay * p.data
        v = state.velocities[i]
        v *= state.momentum
        v += g
        p.data = p.data - state.lr * v


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(fn, inputs, step: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    `fn` maps a list of Tensors to a scalar Tensor; `inputs` are the raw
    arrays to differentiate with respect to. The denominator for the
    relative error is max(|analytic|, |numeric|, 1e-8) per element.
    """
    params = [Tensor(np.asarray(x, dtype=np.float64).copy(), requires_grad=True) for x in inputs]
    out = fn(*params)
    backward(out)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_hi = float(fn(*params).data)
            flat[i] = orig - step
            f_lo = float(fn(*params).data)
            flat[i] = orig
            numeric = (f_hi - f_lo) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
