"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive is a plain function that computes its output
with numpy and, when any input requires a gradient, records a closure on the
active :class:`Tape`. :func:`backward` walks the tape in reverse, accumulates
gradients per node id and hands them back for every leaf.

Broadcasting is deliberately narrow: elementwise binary ops accept either two
tensors of identical shape or a tensor and a Python scalar. The only
exceptions are the bias argument of :func:`affine` and the gate helpers of
:func:`gru_cell`, which are fused layers rather than general arithmetic.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_ids = itertools.count(1)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class DomainError(ValueError):
    """Raised when an op is evaluated outside its domain (e.g. log of 0)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    def __rmul__(self, other):
        return scalar_mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("kind", "out_id", "inputs", "backward")

    def __init__(self, kind, out_id, inputs, backward):
        self.kind = kind
        self.out_id = out_id
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications for one loss evaluation."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, out: Tensor, inputs: Sequence[Tensor], backward) -> None:
        self.nodes.append(_Node(kind, out.node_id, tuple(inputs), backward))

    def reset(self) -> None:
        self.nodes = []


_tape = Tape()
_grad_enabled = True


def get_tape() -> Tape:
    return _tape


@contextmanager
def fresh_tape() -> Iterator[Tape]:
    """Install an empty tape for the duration of the block."""
    global _tape
    saved, _tape = _tape, Tape()
    try:
        yield _tape
    finally:
        _tape = saved


@contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    saved, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = saved


def _make(kind: str, value: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = value
    out.node_id = next(_ids)
    out.grad = None
    out.is_leaf = False
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        _tape.record(kind, out, inputs, backward)
    return out


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss) back through the active tape.

    Returns a map from node id to gradient for every leaf that requires a
    gradient and was reached. The same arrays are also stored on ``leaf.grad``.
    The tape is reset afterwards.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _tape
    if not tape.nodes:
        raise ValueError("backward called on an empty tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    try:
        for node in reversed(tape.nodes):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    leaves[t.node_id] = t
                prev = grads.get(t.node_id)
                grads[t.node_id] = gi if prev is None else prev + gi
    finally:
        tape.reset()
    out = {}
    for nid, leaf in leaves.items():
        leaf.grad = grads[nid]
        out[nid] = grads[nid]
    return out


# --------------------------------------------------------------------------
# elementwise and linear algebra primitives


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _make("add", a.data + b, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _make("sub", a.data - b, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(scalar_mul(b, -1.0), a)
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 2-D."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if ad.ndim > 1 \
            else np.outer(ad, g)
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` either a bias row (out,) or a full matrix."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: shapes {x.shape} and {w.shape} do not conform")
    out_shape = (x.shape[0], w.shape[1])
    if b.shape not in (out_shape, (w.shape[1],)):
        raise ShapeError(f"affine: bias shape {b.shape} does not fit output {out_shape}")
    xd, wd = x.data, w.data
    row_bias = b.ndim == 1

    def bw(g):
        return g @ wd.T, xd.T @ g, (g.sum(axis=0) if row_bias else g)

    return _make("affine", xd @ wd + b.data, (x, w, b), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free for any x and a single ufunc pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input has non-positive entries")
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (a,), bw)


# --------------------------------------------------------------------------
# structural primitives


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: shapes {[x.shape for x in tensors]} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes {sorted(shapes)} differ")
    value = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % value.ndim

    def bw(g):
        return tuple(np.moveaxis(g, ax, 0))

    return _make("stack", value, tensors, bw)


def slice_(a: Tensor, index) -> Tensor:
    value = a.data[index]
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] += g
        return (full,)

    return _make("slice", np.array(value, copy=True), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _make("reshape", value, (a,), lambda g: (g.reshape(src),))


def sum_(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _make("sum", np.asarray(a.data.sum()), (a,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _make("sum", a.data.sum(axis=ax), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(sum_(a, axis), 1.0 / n)


def sq_norm(a: Tensor, axis=None) -> Tensor:
    """Sum of squares, over everything or along ``axis``."""
    ad = a.data
    shape = a.shape
    if axis is None:
        return _make("sq_norm", np.asarray((ad * ad).sum()), (a,), lambda g: (2.0 * g * ad,))
    ax = axis % a.ndim
    return _make("sq_norm", (ad * ad).sum(axis=ax), (a,),
                 lambda g: (2.0 * np.expand_dims(g, ax) * ad,))


def norm(a: Tensor, axis=None) -> Tensor:
    """Euclidean norm; the subgradient at the origin is taken to be 0."""
    ad = a.data
    if axis is None:
        n = np.sqrt((ad * ad).sum())

        def bw(g):
            return (g * ad / n if n > 0 else np.zeros_like(ad),)

        return _make("norm", np.asarray(n), (a,), bw)
    ax = axis % a.ndim
    n = np.sqrt((ad * ad).sum(axis=ax))

    def bw_axis(g):
        nk = np.expand_dims(n, ax)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, np.expand_dims(g, ax) * ad / safe, 0.0),)

    return _make("norm", n, (a,), bw_axis)


def gru_cell(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor, bx: Tensor, bh: Tensor,
             extra: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
    """One GRU step, gate order (reset, update, candidate).

    ``extra`` is an optional (B, 3H) tensor added to the input projection, used
    to inject per-sequence conditioning once instead of re-concatenating it
    every step. ``mask`` (B,) freezes rows whose sequence has already ended.
    """
    hidden = h.shape[-1]
    if x.ndim != 2 or h.ndim != 2 or wx.shape != (x.shape[1], 3 * hidden) \
            or wh.shape != (hidden, 3 * hidden) or x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell: x {x.shape}, h {h.shape}, wx {wx.shape}, wh {wh.shape}")
    xd, hd, wxd, whd = x.data, h.data, wx.data, wh.data
    gx = xd @ wxd + bx.data
    if extra is not None:
        if extra.shape != gx.shape:
            raise ShapeError(f"gru_cell: extra {extra.shape} vs gates {gx.shape}")
        gx = gx + extra.data
    gh = hd @ whd + bh.data
    r = _sigmoid(gx[:, :hidden] + gh[:, :hidden])
    u = _sigmoid(gx[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
    ghn = gh[:, 2 * hidden:]
    n = np.tanh(gx[:, 2 * hidden:] + r * ghn)
    h_new = n + u * (hd - n)
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=hd.dtype)[:, None]
        h_new = m * h_new + (1.0 - m) * hd

    def bw(g):
        gm = g if m is None else g * m
        dn = gm * (1.0 - u)
        du = gm * (hd - n)
        dh = gm * u if m is None else gm * u + g * (1.0 - m)
        dn_pre = dn * (1.0 - n * n)
        dr_pre = dn_pre * ghn * r * (1.0 - r)
        du_pre = du * u * (1.0 - u)
        dgx = np.concatenate([dr_pre, du_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, du_pre, dn_pre * r], axis=1)
        dh = dh + dgh @ whd.T
        grads = [dgx @ wxd.T, dh, xd.T @ dgx, hd.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0)]
        if extra is not None:
            grads.append(dgx)
        return tuple(grads)

    inputs = (x, h, wx, wh, bx, bh) + ((extra,) if extra is not None else ())
    return _make("gru_cell", h_new, inputs, bw)


# --------------------------------------------------------------------------
# op-kind dispatch

OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "log": log,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "concat": concat,
    "stack": stack,
    "slice": slice_,
    "reshape": reshape,
    "sum": sum_,
    "mean": mean,
    "sq_norm": sq_norm,
    "norm": norm,
    "clip": clip,
    "affine": affine,
    "gru_cell": gru_cell,
}


def apply(op_kind: str, *inputs, **attrs) -> Tensor:
    """Apply a primitive by name, e.g. ``apply("matmul", a, b)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    if op_kind in ("concat", "stack"):
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# --------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_check(f, point, h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``point`` is an array (``f`` then takes one Tensor) or a dict of arrays
    (``f`` takes a dict of Tensors). The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("finite_difference_check: h must be positive")
    as_dict = isinstance(point, dict)
    base = {k: np.array(v, dtype=DEFAULT_DTYPE) for k, v in point.items()} if as_dict \
        else {"x": np.array(point, dtype=DEFAULT_DTYPE)}

    def call(arrays, grad):
        ts = {k: Tensor(v.copy(), requires_grad=grad) for k, v in arrays.items()}
        out = f(ts if as_dict else ts["x"])
        return out, ts

    with fresh_tape():
        out, ts = call(base, True)
        if not np.all(np.isfinite(out.data)):
            raise DomainError("finite_difference_check: f is not finite at the point")
        if len(get_tape()):
            backward(out)
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for k, t in ts.items()}

    worst = 0.0
    with no_grad():
        for k, arr in base.items():
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(call(base, False)[0].data)
                flat[i] = orig - h
                fm = float(call(base, False)[0].data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise DomainError("finite_difference_check: f is not finite near the point")
                numeric = (fp - fm) / (2.0 * h)
                a = analytic[k].reshape(-1)[i]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
