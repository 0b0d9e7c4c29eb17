"""Dense float64 tensors with reverse-mode automatic differentiation.

Every forward primitive validates that its output is finite and, when a
tape is active, records a closure that propagates gradients to its
inputs. The tape is rebuilt on every forward pass; one tape per training
step, walked once in reverse execution order.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "maximum",
    "matmul",
    "linear",
    "transpose",
    "reshape",
    "concat_last",
    "slice_last",
    "stack_rows",
    "slice_rows",
    "broadcast_to",
    "mean_axis",
    "sum_axis",
    "softmax_last",
    "cumsum_last",
    "layer_norm",
    "gelu",
    "attention",
    "cross_entropy_logits",
    "sum_squared_error",
]


class NonFiniteError(FloatingPointError):
    """A forward primitive produced NaN or Inf; `op` names the offender."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all arithmetic routes through the module primitives
    # so taping and finiteness checks stay in one place.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Use as a context manager around a forward pass; `backward(loss)` walks
    the record in strict reverse execution order. A tape may be consumed
    exactly once; reuse without a fresh forward pass is an error.
    """

    def __init__(self):
        self._records = []  # (output Tensor, backward closure)
        self._consumed = False

    def __enter__(self):
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _pop_tape(self)
        return False

    def record(self, out: Tensor, backward_fn):
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor):
        if self._consumed:
            raise RuntimeError("tape already consumed; rebuild the forward pass")
        if loss.data.shape != ():
            raise ValueError("backward expects a scalar loss tensor")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, backward_fn in reversed(self._records):
            if out.grad is None:
                continue  # dead branch: nothing downstream consumed it
            backward_fn(out.grad)

    def __len__(self):
        return len(self._records)


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape):
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape):
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise RuntimeError("tape stack corrupted: unbalanced enter/exit")
    _TAPE_STACK.pop()


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(out: np.ndarray, op: str):
    # Summation trick: any NaN/Inf poisons the sum. Orders of magnitude
    # cheaper than isfinite().all() on small arrays. The exact check only
    # runs on the rare suspect, guarding against finite-overflow sums.
    if not math.isfinite(float(out.sum())) and not np.isfinite(out).all():
        raise NonFiniteError(op)


def _accumulate(t: Tensor, g: np.ndarray):
    # Gradients are never mutated in place, so storing a view is safe.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _make_result(data: np.ndarray, op: str, inputs, backward_fn) -> Tensor:
    _check_finite(data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.record(out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make_result(data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make_result(data, "sub", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make_result(data, "mul", (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _make_result(data, "scale", (a,), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum; gradient follows the winning side (ties go to a)."""
    data = np.maximum(a.data, b.data)

    def backward(g):
        take_a = a.data >= b.data
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _make_result(data, "maximum", (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    if a.ndim > 2 and b.ndim == 2:
        # stacked-input x weight-matrix: fold the batch axes into one GEMM
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, a.data.shape[-1])
        data = (a2 @ b.data).reshape(lead + (b.data.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accumulate(a, (g2 @ b.data.T).reshape(a.data.shape))
            if b.requires_grad:
                _accumulate(b, a2.T @ g2)

        return _make_result(data, "matmul", (a, b), backward)

    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make_result(data, "matmul", (a, b), backward)


def linear(a: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: a @ w + b, fused into one record."""
    if a.ndim < 2 or w.ndim != 2:
        raise ValueError("linear expects stacked inputs and a 2-D weight")
    lead = a.data.shape[:-1]
    a2 = a.data.reshape(-1, a.data.shape[-1])
    data = (a2 @ w.data + b.data).reshape(lead + (w.data.shape[-1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if a.requires_grad:
            _accumulate(a, (g2 @ w.data.T).reshape(a.data.shape))
        if w.requires_grad:
            _accumulate(w, a2.T @ g2)
        if b.requires_grad:
            _accumulate(b, g2.sum(axis=0))

    return _make_result(data, "linear", (a, w, b), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.transpose(g, inverse))

    return _make_result(data, "transpose", (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    data = a.data.reshape(shape)
    old_shape = a.data.shape

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(old_shape))

    return _make_result(data, "reshape", (a,), backward)


def concat_last(parts: list) -> Tensor:
    """Concatenate along the final (feature) axis."""
    if not parts:
        raise ValueError("concat_last needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(p, g[..., offset : offset + w])
            offset += w

    return _make_result(data, "concat_last", tuple(parts), backward)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along the final axis."""
    data = a.data[..., start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            _accumulate(a, full)

    return _make_result(data, "slice_last", (a,), backward)


def stack_rows(parts: list) -> Tensor:
    """Concatenate along the leading (batch) axis."""
    if not parts:
        raise ValueError("stack_rows needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=0)
    counts = [p.data.shape[0] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, counts):
            if p.requires_grad:
                _accumulate(p, g[offset : offset + n])
            offset += n

    return _make_result(data, "stack_rows", tuple(parts), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along the leading (batch) axis."""
    data = a.data[start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _accumulate(a, full)

    return _make_result(data, "slice_rows", (a,), backward)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make_result(data.copy(), "broadcast_to", (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axis, ndim):
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def mean_axis(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    data = a.data.mean(axis=axes, keepdims=keepdims)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]

    def backward(g):
        if a.requires_grad:
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axes)
            _accumulate(a, np.broadcast_to(gg, a.data.shape) / count)

    return _make_result(data, "mean_axis", (a,), backward)


def sum_axis(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axes)
            _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make_result(data, "sum_axis", (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax_last(a: Tensor) -> Tensor:
    """Softmax along the final axis: positive entries summing to one."""
    if a.data.shape[-1] < 1:
        raise ValueError("softmax requires a non-empty last axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(a, s * (g - inner))

    return _make_result(s, "softmax_last", (a,), backward)


def cumsum_last(a: Tensor) -> Tensor:
    """Running total along the final axis."""
    if a.data.shape[-1] < 1:
        raise ValueError("cumsum requires a non-empty last axis")
    data = np.cumsum(a.data, axis=-1)

    def backward(g):
        if a.requires_grad:
            # reverse cumulative sum: out_i feeds every x_j with j <= i
            _accumulate(a, np.cumsum(g[..., ::-1], axis=-1)[..., ::-1])

    return _make_result(data, "cumsum_last", (a,), backward)


_LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize over the final axis, then apply per-channel gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xh = xc * inv
    data = xh * gain.data + bias.data

    def backward(g):
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * xh, gain.data.shape))
        if x.requires_grad:
            dxh = g * gain.data
            m1 = dxh.mean(axis=-1, keepdims=True)
            m2 = (dxh * xh).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (dxh - m1 - xh * m2))

    return _make_result(data, "layer_norm", (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x2 = x.data * x.data
    t = np.tanh(_GELU_C * (x.data + 0.044715 * x2 * x.data))
    half_1pt = 0.5 * (1.0 + t)
    data = x.data * half_1pt

    def backward(g):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 0.134145 * x2)
            local = half_1pt + 0.5 * x.data * (1.0 - t * t) * du
            _accumulate(x, g * local)

    return _make_result(data, "gelu", (x,), backward)


# ---------------------------------------------------------------------------
# composites and losses


def attention(q: Tensor, k: Tensor, v: Tensor, additive_mask: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    q, k, v: (..., S, d_head). The optional additive mask is added to the
    (..., S, S) logit matrix before normalization.
    """
    d_head = q.shape[-1]
    logits = scale(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))), 1.0 / math.sqrt(d_head))
    if additive_mask is not None:
        logits = add(logits, additive_mask)
    weights = softmax_last(logits)
    return matmul(weights, v)


def cross_entropy_logits(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against one-hot rows."""
    if logits.ndim != 2:
        raise ValueError("cross_entropy_logits expects (N, K) logits")
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.shape != logits.data.shape:
        raise ValueError("one-hot targets must match logits shape")
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    data = np.asarray(-(onehot * logp).sum() / n)

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(logp)
            _accumulate(logits, (probs - onehot) * (g / n))

    return _make_result(data, "cross_entropy_logits", (logits,), backward)


def sum_squared_error(a: Tensor, b: Tensor) -> Tensor:
    """Scalar sum of squared differences over every element."""
    if a.data.shape != b.data.shape:
        raise ValueError("squared error requires matching shapes")
    diff = a.data - b.data
    data = np.asarray((diff * diff).sum())

    def backward(g):
        if a.requires_grad:
            _accumulate(a, 2.0 * diff * g)
        if b.requires_grad:
            _accumulate(b, -2.0 * diff * g)

    return _make_result(data, "sum_squared_error", (a, b), backward)
