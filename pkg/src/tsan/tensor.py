"""Dense NCHW tensors with tape-based reverse-mode differentiation.

Only the closed set of operations the network needs is provided. Every op
computes in the dtype of its inputs, so the same graph runs in float32 for
training and in float64 for finite-difference checks.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

AXIS_NAMES = {"channel": 1, "height": 2, "width": 3}

_grad_enabled = True
_counter: "OpCounter | None" = None


class ShapeError(ValueError):
    """An operation was called with inputs violating its shape contract."""


@dataclass
class OpCounter:
    """Running totals of multiply-accumulates and other arithmetic ops."""

    macs: int = 0
    other: int = 0

    def flops(self, convention: str = "2mac") -> int:
        return (2 if convention == "2mac" else 1) * self.macs + self.other


@contextlib.contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Tally arithmetic performed by ops executed inside the block."""
    global _counter
    prev, _counter = _counter, OpCounter()
    try:
        yield _counter
    finally:
        _counter = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _tally(macs: int = 0, other: int = 0) -> None:
    if _counter is not None:
        _counter.macs += int(macs)
        _counter.other += int(other)


@dataclass(eq=False)
class OpRecord:
    kind: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.array(data, dtype=dtype)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds 4")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: OpRecord | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=like.dtype))


def _make(arr: np.ndarray, inputs: Sequence[Tensor], kind: str, backward_fn) -> Tensor:
    out = Tensor._wrap(arr)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = OpRecord(kind, tuple(inputs), backward_fn)
    return out


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Topologically ordered (output, record) pairs reachable from a root."""

    records: list[tuple[Tensor, OpRecord]] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for inp in reversed(t._node.inputs):
                    if inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        tape = cls()
        for t in order:
            if t._node is not None:
                tape.records.append((t, t._node))
            elif t.requires_grad:
                tape.leaves.append(t)
        return tape


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, rec in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=leaf.dtype)
        else:
            leaf.grad += g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(x: Tensor, y: Tensor) -> Tensor:
    _broadcast_shape(x, y)
    out = x.data + y.data
    _tally(other=out.size)
    xs, ys = x.shape, y.shape
    return _make(out, (x, y), "add", lambda g: (_unbroadcast(g, xs), _unbroadcast(g, ys)))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _broadcast_shape(x, y)
    xd, yd = x.data, y.data
    out = xd * yd
    _tally(other=out.size)

    def bw(g):
        return _unbroadcast(g * yd, xd.shape), _unbroadcast(g * xd, yd.shape)

    return _make(out, (x, y), "mul", bw)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * x.data.dtype.type(c)
    _tally(other=out.size)
    return _make(out, (x,), "scale", lambda g: (g * g.dtype.type(c),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, x.data.dtype.type(0))  # propagates NaN
    _tally(other=out.size)
    return _make(out, (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    half = x.data.dtype.type(0.5)
    out = half * (np.tanh(half * x.data) + 1)
    _tally(other=out.size)
    return _make(out, (x,), "sigmoid", lambda g: (g * out * (1 - out),))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    _tally(other=x.size)
    shape = x.shape
    return _make(out, (x,), "sum", lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat extents disagree: {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, "concat", lambda g: np.split(g, bounds, axis=axis))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    src = x.shape
    return _make(out, (x,), "reshape", lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, (x,), "permute", lambda g: (g.transpose(inv),))


def gather_hw(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Index the two spatial axes; covers reflect padding and cropping."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = x.data[:, :, rows][:, :, :, cols]
    src = x.shape

    def bw(g):
        gx = np.zeros(src, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        return (gx,)

    return _make(out, (x,), "gather_hw", bw)


def mean_over_axes(x: Tensor, axes: Iterable[str | int]) -> Tensor:
    idx = sorted({AXIS_NAMES[a] if isinstance(a, str) else int(a) for a in axes})
    if not idx:
        raise ShapeError("mean over an empty axis set")
    if x.data.ndim != 4 or any(a not in (1, 2, 3) for a in idx):
        raise ShapeError(f"mean axes {idx} invalid for shape {x.shape}")
    ax = tuple(idx)
    count = int(np.prod([x.shape[a] for a in ax]))
    out = x.data.mean(axis=ax, keepdims=True)
    _tally(other=x.size)
    src = x.shape
    inv = x.dtype.type(1.0 / count)
    return _make(out, (x,), "mean", lambda g: (np.broadcast_to(g * inv, src).copy(),))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channels {c} not divisible by {r}^2")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def bw(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), "pixel_shuffle", bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial extents {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def bw(g):
        return (g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr),)

    return _make(np.ascontiguousarray(out), (x,), "pixel_unshuffle", bw)


def cut_cells(x: Tensor, n: int) -> Tensor:
    """(N, C, nh, nw) -> (N, n*n*C, h, w); cells row-major, each cell a C-channel slab."""
    b, c, hh, ww = x.shape
    if hh % n or ww % n:
        raise ShapeError(f"extents {hh}x{ww} not divisible by {n}")
    h, w = hh // n, ww // n
    out = x.data.reshape(b, c, n, h, n, w).transpose(0, 2, 4, 1, 3, 5).reshape(b, n * n * c, h, w)

    def bw(g):
        return (g.reshape(b, n, n, c, h, w).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, hh, ww),)

    return _make(np.ascontiguousarray(out), (x,), "cut", bw)


def splice_cells(x: Tensor, n: int) -> Tensor:
    """Inverse of :func:`cut_cells`."""
    b, cc, h, w = x.shape
    if cc % (n * n):
        raise ShapeError(f"channels {cc} not divisible by {n}^2")
    c = cc // (n * n)
    out = x.data.reshape(b, n, n, c, h, w).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, n * h, n * w)

    def bw(g):
        return (g.reshape(b, c, n, h, n, w).transpose(0, 2, 4, 1, 3, 5).reshape(b, cc, h, w),)

    return _make(np.ascontiguousarray(out), (x,), "splice", bw)


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------


def _conv_impl(x: Tensor, w: Tensor, b: Tensor | None, dilation: int, pad_h: int, pad_w: int) -> Tensor:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")
    ho = h + 2 * pad_h - dilation * (kh - 1)
    wo = wd + 2 * pad_w - dilation * (kw - 1)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"non-positive output extent {ho}x{wo}")

    xd = x.data
    if pad_h or pad_w:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    else:
        xp = xd
    L = ho * wo
    K = cin * kh * kw
    # columns laid out as (K, N*L) so each product is a single large GEMM
    if kh == kw == 1:
        cols = np.ascontiguousarray(xp.transpose(1, 0, 2, 3)).reshape(K, n * L)
    else:
        cols6 = np.empty((cin, kh, kw, n, ho, wo), dtype=xd.dtype)
        xt = xp.transpose(1, 0, 2, 3)
        for i in range(kh):
            for j in range(kw):
                cols6[:, i, j] = xt[:, :, i * dilation : i * dilation + ho, j * dilation : j * dilation + wo]
        cols = cols6.reshape(K, n * L)
    w2 = w.data.reshape(cout, K)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    _tally(macs=n * cout * L * K, other=n * cout * L if b is not None else 0)
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * L)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = w2.T @ g2
            if kh == kw == 1:
                gxp = dcols.reshape(cin, n, ho, wo)
            else:
                dcols = dcols.reshape(cin, kh, kw, n, ho, wo)
                gxp = np.zeros((cin, n) + xp.shape[2:], dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i * dilation : i * dilation + ho, j * dilation : j * dilation + wo] += dcols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, pad_h : pad_h + h, pad_w : pad_w + wd] if (pad_h or pad_w) else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _make(out, inputs, "conv2d", bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1, padding: int = 0) -> Tensor:
    """Stride-1 zero-padded dilated cross-correlation with a square kernel."""
    if w.data.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] not in (1, 3, 7):
        raise ShapeError(f"kernel must be square with k in (1, 3, 7), got {w.shape}")
    if dilation < 1 or padding < 0:
        raise ShapeError("dilation must be >= 1 and padding >= 0")
    return _conv_impl(x, w, b, dilation, padding, padding)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Single-channel, length-preserving 1-D convolution over the last axis of (N, L)."""
    if x.data.ndim != 2 or w.data.ndim != 1 or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d expects (N, L) input and odd-length kernel, got {x.shape}, {w.shape}")
    k = w.shape[0]
    n, length = x.shape
    x4 = reshape(x, (n, 1, length, 1))
    w4 = reshape(w, (1, 1, k, 1))
    return reshape(_conv_impl(x4, w4, b, 1, k // 2, 0), (n, length))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: trailing extent {x.shape[-1:]} vs weight {w.shape}")
    m, k = w.shape
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        if b.shape != (m,):
            raise ShapeError(f"bias shape {b.shape} != ({m},)")
        out = out + b.data
    rows = xd.size // k
    _tally(macs=rows * m * k, other=rows * m if b is not None else 0)

    def bw(g):
        gx = g @ wd
        gw = g.reshape(-1, m).T @ xd.reshape(-1, k)
        gb = g.reshape(-1, m).sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(out, (x, w, b) if b is not None else (x, w), "dense", bw)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mae shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)
    _tally(other=3 * diff.size)
    inv = pred.dtype.type(1.0 / diff.size)
    sgn = np.sign(diff)

    def bw(g):
        gp = sgn * (g * inv)
        return gp, -gp

    return _make(out, (pred, target), "mae", bw)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def gradcheck(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-3,
    wrt: Sequence[Tensor] = (),
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    ``x`` is re-created in float64; tensors in ``wrt`` (typically module
    parameters) are perturbed in place and must already be float64.
    ``max_coords`` caps the number of checked coordinates by uniform sampling.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    xs64 = [Tensor(t.data, requires_grad=True, dtype=np.float64) for t in xs]
    targets = xs64 + list(wrt)
    for t in targets:
        if t.dtype != np.float64:
            raise TypeError("gradcheck targets must be float64")
        t.grad = None

    backward(f(*xs64))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in targets]

    coords = [(ti, i) for ti, t in enumerate(targets) for i in range(t.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    with no_grad():
        for ti, i in coords:
            flat = targets[ti].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*xs64).data)
            flat[i] = orig - h
            fm = float(f(*xs64).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic[ti].reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    for t in targets:
        t.grad = None
    return worst
