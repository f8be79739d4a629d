"""Dense N-D tensors with reverse-mode differentiation.

Storage is a numpy array. Every differentiable op records its parents and a
closure that maps the output gradient to parent gradients; :func:`backward`
replays those closures in reverse topological order.

Reductions run in a fixed order (numpy's row-major pairwise summation on
contiguous buffers, sequential accumulation over kernel offsets in the
convolutions), so identical inputs give bit-identical outputs within one
build.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)
_MAC_COUNTER = contextvars.ContextVar("mac_counter", default=None)
_KINK_LOG = contextvars.ContextVar("kink_log", default=None)


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested op."""


class MacCounter:
    """Accumulates multiply-accumulate counts of matmuls and convolutions."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int):
        n = int(n)
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


@contextlib.contextmanager
def count_macs():
    """Context manager yielding a fresh :class:`MacCounter` for the enclosed ops."""
    counter = MacCounter()
    token = _MAC_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTER.reset(token)


def _record_macs(op: str, n: int):
    counter = _MAC_COUNTER.get()
    if counter is not None:
        counter.add(op, n)


@contextlib.contextmanager
def no_grad():
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """N-D array that optionally participates in gradient recording."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor {self.data.shape}")
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _check_finite(out: np.ndarray, op: str):
    if not np.isfinite(out).all():
        raise FloatingPointError(f"non-finite value produced by op '{op}'")


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor(out, dtype=out.dtype)
    t._op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._prev = tuple(parents)
        t._backward = backward_fn
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data - b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), _bw, "mul")


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    log = _KINK_LOG.get()
    if log is not None:
        log.append(positive)
    scale = np.where(positive, 1.0, slope).astype(x.dtype)
    out = x.data * scale

    def _bw(g):
        x._accumulate(g * scale)

    return _make(out, (x,), _bw, "leaky_relu")


def elementwise(op: str, a, b=None, slope: float = 0.1) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul`` or ``leaky_relu``."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "leaky_relu":
        return leaky_relu(a, slope)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra ------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product over the two trailing axes.

    ``b`` may be a plain 2-D matrix shared across all leading batch entries of
    ``a`` (the projection case); otherwise leading dims must match.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    if b.ndim == 2 and a.ndim > 2:
        m, k = int(np.prod(a.shape[:-1])), a.shape[-1]
        out = (a.data.reshape(m, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)
    _record_macs("matmul", np.prod(a.shape) * b.shape[-1])

    def _bw(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), _bw, "matmul")


def matmul_batched(a, b) -> Tensor:
    return matmul(a, b)


def softmax(x) -> Tensor:
    """Softmax over the last axis, shifted by the row max for stability."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last dim")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), _bw, "softmax")


softmax_lastdim = softmax


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing feature axis, then apply ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine params must be ({c},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gh = g * gamma.data
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(dx)

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), _bw, "layer_norm")


# -- convolution -----------------------------------------------------------------
def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ShapeError(f"expected 3 values, got {v}")
    return v


def _offset_slices(k, s, n_out):
    # slice selecting every input location touched by kernel offset (a, b, c)
    for a in range(k[0]):
        for b in range(k[1]):
            for c in range(k[2]):
                yield (a, b, c), (
                    slice(None),
                    slice(a, a + s[0] * (n_out[0] - 1) + 1, s[0]),
                    slice(b, b + s[1] * (n_out[1] - 1) + 1, s[1]),
                    slice(c, c + s[2] * (n_out[2] - 1) + 1, s[2]),
                    slice(None),
                )


def _conv_fwd(xp, w, s, n_out):
    n = xp.shape[0]
    out = np.zeros((n,) + tuple(n_out) + (w.shape[-1],), dtype=xp.dtype)
    for (a, b, c), sl in _offset_slices(w.shape[:3], s, n_out):
        out += xp[sl] @ w[a, b, c]
    return out


def _conv_adjoint(g, w, s, padded_shape, n_out):
    gx = np.zeros(padded_shape, dtype=g.dtype)
    for (a, b, c), sl in _offset_slices(w.shape[:3], s, n_out):
        gx[sl] += g @ w[a, b, c].T
    return gx


def _conv_weight_grad(xp, g, w_shape, s, n_out):
    gw = np.zeros(w_shape, dtype=g.dtype)
    cin, cout = w_shape[3], w_shape[4]
    g2 = g.reshape(-1, cout)
    for (a, b, c), sl in _offset_slices(w_shape[:3], s, n_out):
        gw[a, b, c] = xp[sl].reshape(-1, cin).T @ g2
    return gw


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects [D,H,W,C] or [N,D,H,W,C], got {x.shape}")
    return x, False


def conv3d(x, kernel, bias=None, stride=1, pad=0) -> Tensor:
    """3-D cross-correlation with zero padding.

    ``x`` is ``[D,H,W,Cin]`` or ``[N,D,H,W,Cin]``; ``kernel`` is
    ``[kd,kh,kw,Cin,Cout]``; ``bias`` is ``[Cout]`` or None.
    """
    x, squeeze = _batched(as_tensor(x))
    w = as_tensor(kernel)
    s, p = _triple(stride), _triple(pad)
    if w.ndim != 5 or w.shape[3] != x.shape[-1]:
        raise ShapeError(f"kernel {w.shape} incompatible with input channels {x.shape[-1]}")
    k = w.shape[:3]
    n_out = tuple((x.shape[1 + i] + 2 * p[i] - k[i]) // s[i] + 1 for i in range(3))
    if min(n_out) < 1 or any(x.shape[1 + i] + 2 * p[i] < k[i] for i in range(3)):
        raise ShapeError(f"conv3d output extent nonpositive for input {x.shape}, kernel {k}")
    pads = ((0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2]), (0, 0))
    xp = np.pad(x.data, pads)
    out = _conv_fwd(xp, w.data, s, n_out)
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (w.shape[4],):
            raise ShapeError(f"bias shape {b.shape} != ({w.shape[4]},)")
        out += b.data
    _record_macs("conv3d", x.shape[0] * np.prod(n_out) * np.prod(w.shape))

    def _bw(g):
        if x.requires_grad:
            gx = _conv_adjoint(g, w.data, s, xp.shape, n_out)
            x._accumulate(gx[:, p[0]:p[0] + x.shape[1], p[1]:p[1] + x.shape[2],
                             p[2]:p[2] + x.shape[3]])
        if w.requires_grad:
            w._accumulate(_conv_weight_grad(xp, g, w.shape, s, n_out))
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    out_t = _make(out, parents, _bw, "conv3d")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def conv3d_transposed(x, kernel, bias=None, stride=1, pad=0, output_shape=None) -> Tensor:
    """Adjoint of :func:`conv3d` with the same kernel tensor.

    ``kernel`` keeps the ``[kd,kh,kw,Cout,Cin]`` layout of the conv it
    transposes: ``x`` carries ``kernel.shape[4]`` channels and the result
    carries ``kernel.shape[3]``. Spatial extents default to
    ``(n - 1) * s - 2p + k``; ``output_shape`` picks another extent of the
    same conv preimage.
    """
    x, squeeze = _batched(as_tensor(x))
    w = as_tensor(kernel)
    s, p = _triple(stride), _triple(pad)
    if w.ndim != 5 or w.shape[4] != x.shape[-1]:
        raise ShapeError(f"kernel {w.shape} incompatible with input channels {x.shape[-1]}")
    k = w.shape[:3]
    n_in = x.shape[1:4]
    if output_shape is None:
        size = tuple((n_in[i] - 1) * s[i] - 2 * p[i] + k[i] for i in range(3))
    else:
        size = tuple(int(v) for v in output_shape)
        if len(size) != 3 or any((size[i] + 2 * p[i] - k[i]) // s[i] + 1 != n_in[i] for i in range(3)):
            raise ShapeError(f"output_shape {output_shape} inconsistent with input {n_in}")
    if min(size) < 1:
        raise ShapeError(f"conv3d_transposed output extent nonpositive: {size}")
    padded = (x.shape[0],) + tuple(max(size[i] + 2 * p[i], (n_in[i] - 1) * s[i] + k[i])
                                   for i in range(3)) + (w.shape[3],)
    full = _conv_adjoint(x.data, w.data, s, padded, n_in)
    crop = (slice(None), slice(p[0], p[0] + size[0]), slice(p[1], p[1] + size[1]),
            slice(p[2], p[2] + size[2]), slice(None))
    out = full[crop].copy()
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (w.shape[3],):
            raise ShapeError(f"bias shape {b.shape} != ({w.shape[3]},)")
        out += b.data
    _record_macs("conv3d_transposed", x.shape[0] * np.prod(n_in) * np.prod(w.shape))

    def _bw(g):
        gp = np.zeros(padded[:-1] + (g.shape[-1],), dtype=g.dtype)
        gp[crop] = g
        if x.requires_grad:
            x._accumulate(_conv_fwd(gp, w.data, s, n_in))
        if w.requires_grad:
            # swap roles: the "input" of the adjoint pair is gp, the output is x
            gw = _conv_weight_grad(gp, x.data, w.shape, s, n_in)
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    out_t = _make(out, parents, _bw, "conv3d_transposed")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


# -- structural ops ----------------------------------------------------------------
def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(v) for v in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def _bw(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out, (x,), _bw, "reshape")


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for {x.ndim}-d tensor")
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def _bw(g):
        x._accumulate(np.transpose(g, inverse))

    return _make(out, (x,), _bw, "permute")


def reshape_permute(x, shape=None, axes=None) -> Tensor:
    """Reshape (if ``shape``) then permute (if ``axes``)."""
    if shape is not None:
        x = reshape(x, shape)
    if axes is not None:
        x = permute(x, axes)
    return as_tensor(x)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[index], copy=True)

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        x._accumulate(gx)

    return _make(out, (x,), _bw, "getitem")


def pad(x, widths) -> Tensor:
    """Zero-pad; ``widths`` is a per-axis list of ``(before, after)``."""
    x = as_tensor(x)
    widths = tuple((int(a), int(b)) for a, b in widths)
    out = np.pad(x.data, widths)
    index = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))

    def _bw(g):
        x._accumulate(g[index])

    return _make(out, (x,), _bw, "pad")


def roll(x, shifts, axes) -> Tensor:
    x = as_tensor(x)
    shifts, axes = tuple(shifts), tuple(axes)
    out = np.roll(x.data, shifts, axes)

    def _bw(g):
        x._accumulate(np.roll(g, tuple(-v for v in shifts), axes))

    return _make(out, (x,), _bw, "roll")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def _bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _make(out, ts, _bw, "concat")


def take(table, index) -> Tensor:
    """Gather rows of ``table`` (axis 0) by an integer index array."""
    table = as_tensor(table)
    index = np.asarray(index)
    out = table.data[index]

    def _bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        table._accumulate(gt)

    return _make(out, (table,), _bw, "take")


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def _bw(g):
        x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _make(out, (x,), _bw, "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def _bw(g):
        x._accumulate(np.full(x.shape, g / n, dtype=x.dtype))

    return _make(out, (x,), _bw, "mean")


def mse_loss(pred, target) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))


# -- differentiation ---------------------------------------------------------------
def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Intermediate gradients and recorded closures are released afterwards.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any requires_grad tensor")
    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if not node.is_leaf:
            node.grad = None
            node._backward = None
            node._prev = ()


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    refined: int  # coordinates whose stencil crossed a LeakyReLU kink at the base step
    floor: float
    below_floor: int  # coordinates whose gradient magnitude is under the floor


def _eval_with_pattern(f, x):
    log = []
    token = _KINK_LOG.set(log)
    try:
        value = float(f(x).data)
    finally:
        _KINK_LOG.reset(token)
    return value, log


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check_report(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      indices: Sequence[tuple] | None = None, floor: float | None = None,
                      max_refine: int = 4) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` at ``x`` with central differences.

    Per coordinate the relative error is ``|a - n| / max(|a|, |n|, floor)``.
    By default ``floor = 1e4 * eps * max(|f(x)|, 1) / h``: the gradient size
    below which rounding in the difference quotient alone exceeds a 1e-4
    relative error.

    Central differences need ``f`` smooth over ``[x - h, x + h]``; when the
    LeakyReLU sign pattern differs between the two stencil points, the step
    is divided by 10 (at most ``max_refine`` times) until it does not.
    """
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    f0 = float(loss.data)
    backward(loss)
    analytic = x.grad.copy()
    x.grad = None
    if floor is None:
        floor = 1e4 * np.finfo(x.dtype).eps * max(abs(f0), 1.0) / h
    if indices is None:
        indices = list(np.ndindex(x.shape))
    worst, refined, below = 0.0, 0, 0
    with no_grad():
        for idx in indices:
            orig = x.data[idx].copy()
            step = h
            for attempt in range(max_refine + 1):
                x.data[idx] = orig + step
                fp, pat_p = _eval_with_pattern(f, x)
                x.data[idx] = orig - step
                fm, pat_m = _eval_with_pattern(f, x)
                x.data[idx] = orig
                if _same_pattern(pat_p, pat_m):
                    break
                step /= 10.0
            refined += attempt > 0
            num = (fp - fm) / (2 * step)
            a = float(analytic[idx])
            below += max(abs(a), abs(num)) < floor
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return GradCheckReport(worst, len(indices), refined, floor, below)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               indices: Sequence[tuple] | None = None, floor: float | None = None) -> float:
    """Max relative error between tape gradient and central differences."""
    return grad_check_report(f, x, h, indices, floor).max_rel_error
