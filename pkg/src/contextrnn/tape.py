"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small: it covers exactly the primitives the
forecasting architecture needs. Every tracked operation is recorded on an
explicit :class:`Tape`; gradients are obtained by walking the tape in
reverse. Tensors without a tape reference act as constants, so
forward-only code (prediction, finite-difference probes) pays no
recording cost.

The tape is rebuilt for every training step (define-by-run); a tape and
its tensors belong to a single logical thread.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "primitive_forward",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "slice_",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "mean",
    "conv1d_depthwise",
    "conv1d_pointwise",
    "relu",
    "clip",
    "hypot",
    "atan2",
    "reshape",
]


class Node:
    """One recorded primitive: op name, input node ids, saved output values."""

    __slots__ = ("id", "op", "inputs", "values", "pulls")

    def __init__(self, id, op, inputs, values, pulls):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.values = values
        # pulls: [(input node id, fn(grad_out) -> grad contribution)]
        self.pulls = pulls


class Tape:
    """Append-only record of primitives, plus the gradient map filled by backward.

    Node ids are list indices, so they are topologically ordered by
    construction. ``check_finite=True`` verifies every forward result is
    finite (debug mode; off by default for throughput).
    """

    def __init__(self, check_finite=False):
        self.nodes: list[Node] = []
        self.gradients: dict[int, np.ndarray] = {}
        self.check_finite = check_finite

    def leaf(self, values) -> "Tensor":
        """Register an independent variable and return its tracked tensor."""
        arr = _as_array(values)
        node = Node(len(self.nodes), "leaf", (), arr, ())
        self.nodes.append(node)
        return Tensor(arr, self, node.id)

    def _record(self, op, inputs, values, pulls):
        if self.check_finite and not np.all(np.isfinite(values)):
            raise FloatingPointError(f"non-finite output from primitive '{op}'")
        node = Node(len(self.nodes), op, inputs, values, pulls)
        self.nodes.append(node)
        return node.id


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """Shape + row-major float64 values + optional tape node id."""

    __slots__ = ("values", "tape", "node")

    def __init__(self, values, tape: Tape | None = None, node: int | None = None):
        self.values = _as_array(values)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """Constant copy of this tensor (drops tape tracking, keeps values)."""
        return Tensor(self.values)

    def __repr__(self):
        tracked = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.values.shape}{tracked})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _emit(op, out_values, tracked_pulls, tape):
    """Record a result if any input is tracked; otherwise return a constant."""
    if tape is None:
        return Tensor(out_values)
    inputs = tuple(src for src, _ in tracked_pulls)
    node = tape._record(op, inputs, out_values, tuple(tracked_pulls))
    return Tensor(out_values, tape, node)


def _unbroadcast(grad, shape):
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pulls(pairs):
    """Keep only tracked inputs: pairs of (tensor, pull_fn)."""
    return [(t.node, fn) for t, fn in pairs if t.node is not None]


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    out = a.values + b.values
    pulls = _pulls(
        [
            (a, lambda g, s=a.values.shape: _unbroadcast(g, s)),
            (b, lambda g, s=b.values.shape: _unbroadcast(g, s)),
        ]
    )
    return _emit("add", out, pulls, _common_tape((a, b)))


def sub(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    out = a.values - b.values
    pulls = _pulls(
        [
            (a, lambda g, s=a.values.shape: _unbroadcast(g, s)),
            (b, lambda g, s=b.values.shape: _unbroadcast(-g, s)),
        ]
    )
    return _emit("sub", out, pulls, _common_tape((a, b)))


def mul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    out = a.values * b.values
    av, bv = a.values, b.values
    pulls = _pulls(
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ]
    )
    return _emit("mul_elementwise", out, pulls, _common_tape((a, b)))


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D×2-D, 2-D×1-D and 1-D×2-D operands."""
    a, b = _tensor(a), _tensor(b)
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ValueError(f"matmul needs 1-D/2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv

    def pull_a(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv)
        return bv @ g  # a is 1-D, b is 2-D

    def pull_b(g):
        if av.ndim == 2 and bv.ndim == 2:
            return av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ g
        return np.outer(av, g)

    pulls = _pulls([(a, pull_a), (b, pull_b)])
    return _emit("matmul", out, pulls, _common_tape((a, b)))


def concat(tensors, axis=0) -> Tensor:
    ts = [_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    out = np.concatenate([t.values for t in ts], axis=axis)
    pairs = []
    offset = 0
    for t in ts:
        width = t.values.shape[axis]
        lo, hi = offset, offset + width

        def pull(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        pairs.append((t, pull))
        offset = hi
    return _emit("concat", out, _pulls(pairs), _common_tape(ts))


def slice_(x, start, stop, axis=0) -> Tensor:
    x = _tensor(x)
    if not (0 <= start <= stop <= x.values.shape[axis]):
        raise ValueError(f"slice [{start}:{stop}] out of range for {x.values.shape}")
    index = [slice(None)] * x.values.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.values[index].copy()
    xshape = x.values.shape

    def pull(g):
        full = np.zeros(xshape)
        full[index] = g
        return full

    return _emit("slice", out, _pulls([(x, pull)]), x.tape)


def reshape(x, shape) -> Tensor:
    x = _tensor(x)
    out = x.values.reshape(shape)
    xshape = x.values.shape
    pulls = _pulls([(x, lambda g: g.reshape(xshape))])
    return _emit("reshape", out, pulls, x.tape)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x) -> Tensor:
    x = _tensor(x)
    v = x.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    pulls = _pulls([(x, lambda g: g * out * (1.0 - out))])
    return _emit("sigmoid", out, pulls, x.tape)


def tanh(x) -> Tensor:
    x = _tensor(x)
    out = np.tanh(x.values)
    pulls = _pulls([(x, lambda g: g * (1.0 - out * out))])
    return _emit("tanh", out, pulls, x.tape)


def exp(x) -> Tensor:
    x = _tensor(x)
    out = np.exp(x.values)
    pulls = _pulls([(x, lambda g: g * out)])
    return _emit("exp", out, pulls, x.tape)


def log(x) -> Tensor:
    x = _tensor(x)
    if np.any(x.values <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    out = np.log(x.values)
    xv = x.values
    pulls = _pulls([(x, lambda g: g / xv)])
    return _emit("log", out, pulls, x.tape)


def relu(x) -> Tensor:
    x = _tensor(x)
    out = np.maximum(x.values, 0.0)
    gate = (x.values > 0.0).astype(np.float64)
    pulls = _pulls([(x, lambda g: g * gate)])
    return _emit("relu", out, pulls, x.tape)


def clip(x, lo, hi) -> Tensor:
    """Hard clamp; gradient passes through wherever lo <= x <= hi."""
    x = _tensor(x)
    out = np.clip(x.values, lo, hi)
    gate = ((x.values >= lo) & (x.values <= hi)).astype(np.float64)
    pulls = _pulls([(x, lambda g: g * gate)])
    return _emit("clip", out, pulls, x.tape)


def hypot(a, b) -> Tensor:
    """Elementwise sqrt(a² + b²); gradient defined as 0 at the origin."""
    a, b = _tensor(a), _tensor(b)
    out = np.hypot(a.values, b.values)
    safe = np.where(out == 0.0, 1.0, out)
    av, bv = a.values, b.values
    pulls = _pulls(
        [
            (a, lambda g: _unbroadcast(g * av / safe, av.shape)),
            (b, lambda g: _unbroadcast(g * bv / safe, bv.shape)),
        ]
    )
    return _emit("hypot", out, pulls, _common_tape((a, b)))


def atan2(y, x) -> Tensor:
    """Elementwise atan2; gradient zeroed where x² + y² < 1e-12 (noise bins)."""
    y, x = _tensor(y), _tensor(x)
    out = np.arctan2(y.values, x.values)
    d = x.values * x.values + y.values * y.values
    inv = np.where(d < 1e-12, 0.0, 1.0 / np.where(d == 0.0, 1.0, d))
    yv, xv = y.values, x.values
    pulls = _pulls(
        [
            (y, lambda g: _unbroadcast(g * xv * inv, yv.shape)),
            (x, lambda g: _unbroadcast(-g * yv * inv, xv.shape)),
        ]
    )
    return _emit("atan2", out, pulls, _common_tape((y, x)))


# ---------------------------------------------------------------------------
# reductions


def mean(x) -> Tensor:
    x = _tensor(x)
    out = np.asarray(x.values.mean())
    n = x.values.size
    xshape = x.values.shape
    pulls = _pulls([(x, lambda g: np.full(xshape, float(g) / n))])
    return _emit("mean", out, pulls, x.tape)


# ---------------------------------------------------------------------------
# 1-D convolutions (true convolution: kernel is flipped)


def _conv_slice(full_len, width, kw, padding):
    if padding == "same":
        start = (kw - 1) // 2
        return start, start + width
    if padding == "valid":
        return kw - 1, width  # length W - kw + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def conv1d_depthwise(x, kernels, padding="same") -> Tensor:
    """Per-channel 1-D convolution of a (C, W) stack with (C, kw) kernels.

    'same' keeps length W with zero padding; 'valid' yields W - kw + 1.
    """
    x, kernels = _tensor(x), _tensor(kernels)
    xv, kv = x.values, kernels.values
    if xv.ndim != 2 or kv.ndim != 2 or xv.shape[0] != kv.shape[0]:
        raise ValueError(f"depthwise conv shape mismatch: signal {xv.shape}, kernels {kv.shape}")
    channels, width = xv.shape
    kw = kv.shape[1]
    if padding == "valid" and kw > width:
        raise ValueError("kernel longer than signal with valid padding")
    full_len = width + kw - 1
    lo, hi = _conv_slice(full_len, width, kw, padding)
    out = np.empty((channels, hi - lo))
    for c in range(channels):
        out[c] = np.convolve(xv[c], kv[c])[lo:hi]

    def pull_x(g):
        grad = np.empty_like(xv)
        for c in range(channels):
            gf = np.zeros(full_len)
            gf[lo:hi] = g[c]
            grad[c] = np.convolve(gf, kv[c][::-1])[kw - 1 : kw - 1 + width]
        return grad

    def pull_k(g):
        grad = np.empty_like(kv)
        for c in range(channels):
            gf = np.zeros(full_len)
            gf[lo:hi] = g[c]
            grad[c] = np.convolve(gf, xv[c][::-1])[width - 1 : width - 1 + kw]
        return grad

    pulls = _pulls([(x, pull_x), (kernels, pull_k)])
    return _emit("conv1d_depthwise", out, pulls, _common_tape((x, kernels)))


def conv1d_pointwise(kernels, x) -> Tensor:
    """1×1 channel-mixing convolution: (C_out, C_in) kernels applied to (C_in, W)."""
    kernels, x = _tensor(kernels), _tensor(x)
    kv, xv = kernels.values, x.values
    if kv.ndim != 2 or xv.ndim != 2 or kv.shape[1] != xv.shape[0]:
        raise ValueError(f"pointwise conv shape mismatch: kernels {kv.shape}, signal {xv.shape}")
    out = kv @ xv
    pulls = _pulls(
        [
            (kernels, lambda g: g @ xv.T),
            (x, lambda g: kv.T @ g),
        ]
    )
    return _emit("conv1d_pointwise", out, pulls, _common_tape((kernels, x)))


# ---------------------------------------------------------------------------
# dispatch, backward, gradient checking

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul_elementwise": mul,
    "matmul": matmul,
    "concat": concat,
    "slice": slice_,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "mean": mean,
    "conv1d_depthwise": conv1d_depthwise,
    "conv1d_pointwise": conv1d_pointwise,
    "relu": relu,
    "clip": clip,
    "hypot": hypot,
    "atan2": atan2,
    "reshape": reshape,
}


def primitive_forward(op, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by name (see PRIMITIVES for the supported set)."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **kwargs)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate gradients of a scalar loss to every reachable tape node.

    Returns the tape's gradient map (node id -> gradient array). The loss's
    own gradient is 1; gradients of shared subexpressions accumulate.
    """
    if loss.tape is None or loss.node is None:
        raise ValueError("loss is not recorded on a tape")
    if loss.values.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.values.shape}")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.values)}
    for node in reversed(tape.nodes[: loss.node + 1]):
        g = grads.get(node.id)
        if g is None:
            continue
        for src, pull in node.pulls:
            contribution = pull(g)
            seen = grads.get(src)
            grads[src] = contribution if seen is None else seen + contribution
    tape.gradients = grads
    return grads


def grad_check(function, params, epsilon=1e-6, max_coords_per_param=None, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``function`` maps a list of tensors to a scalar tensor and must be
    deterministic (checked by evaluating the base point twice).
    ``params`` is a list of arrays; when ``max_coords_per_param`` is set,
    only that many coordinates per parameter are probed (seeded choice),
    otherwise all coordinates are.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError("epsilon must be in (0, 1e-2]")
    arrays = [
        np.array(p.values if isinstance(p, Tensor) else p, dtype=np.float64) for p in params
    ]

    def evaluate(values):
        out = function([Tensor(v) for v in values])
        return float(out.values)

    base = evaluate(arrays)
    if evaluate(arrays) != base:
        raise ValueError("function is not deterministic between evaluations")

    tape = Tape()
    leafs = [tape.leaf(a) for a in arrays]
    loss = function(leafs)
    # a loss that ignores every parameter never reaches the tape: gradient 0
    grads = backward(loss) if loss.node is not None else {}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, arr in enumerate(arrays):
        analytic_full = grads.get(leafs[i].node)
        if analytic_full is None:
            analytic_full = np.zeros_like(arr)
        coords = np.arange(arr.size)
        if max_coords_per_param is not None and arr.size > max_coords_per_param:
            coords = rng.choice(arr.size, size=max_coords_per_param, replace=False)
        flat = arr.reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + epsilon
            f_plus = evaluate(arrays)
            flat[c] = keep - epsilon
            f_minus = evaluate(arrays)
            flat[c] = keep
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            analytic = float(analytic_full.reshape(-1)[c])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
