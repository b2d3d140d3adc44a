"""Minimal dense-tensor reverse-mode autodiff.

Tensors wrap float64 numpy arrays (row-major). Operations executed while a
Tape is active are recorded; `backward(loss)` replays the tape in reverse
order and accumulates analytic gradients into every requires_grad leaf.

Broadcasting is deliberately restricted: two operands may be combined if
their shapes are equal, one of them is a scalar, or the smaller shape
matches a trailing suffix of the larger one with leading/size-1 axes
broadcast (the per-channel bias pattern (1,C,1,1) against (N,C,H,W) is also
allowed). Anything fancier must be an explicit reshape.

A tape supports exactly one backward pass; a second call raises.
"""

import numpy as np

from . import backend

_TAPE_STACK = []


class Tape:
    """Records primitive ops in execution order (a valid topological order)."""

    def __init__(self):
        self.nodes = []          # (output, inputs, backward_fn)
        self.leaves = set()      # id() of requires_grad leaves seen
        self._leaf_refs = []
        self.consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_is_leaf")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._is_leaf = True

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, inputs, backward_fn):
    tape = current_tape()
    if tape is None:
        return out
    if not any(isinstance(t, Tensor) and _needs_grad(t) for t in inputs):
        return out
    out._is_leaf = False
    tape.nodes.append((out, inputs, backward_fn))
    for t in inputs:
        if isinstance(t, Tensor) and t.requires_grad and t._is_leaf and id(t) not in tape.leaves:
            tape.leaves.add(id(t))
            tape._leaf_refs.append(t)
    return out


def _needs_grad(t):
    return t.requires_grad or not t._is_leaf


def backward(loss):
    """Populate .grad of every requires_grad leaf reachable from `loss`."""
    if loss.size != 1 or loss.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if tape is None:
        raise RuntimeError("backward called without an active Tape")
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    tape.consumed = True

    grads = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, backward_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = backward_fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not _needs_grad(t):
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for leaf in tape._leaf_refs:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64)
        else:
            leaf.grad = leaf.grad + g


# -- broadcasting helpers ---------------------------------------------------

def _broadcast_ok(sa, sb):
    if sa == sb or sa == () or sb == ():
        return True
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    padded = (1,) * (len(big) - len(small)) + small
    return all(p == q or p == 1 or q == 1 for p, q in zip(padded, big))


def _check_broadcast(sa, sb, opname):
    if not _broadcast_ok(sa, sb):
        raise ValueError(f"{opname}: shapes {sa} and {sb} do not broadcast "
                         "(trailing-dimension broadcast only)")


def _unbroadcast(g, shape):
    """Sum-reduce gradient g back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = Tensor(a.data * b.data)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _record(out, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    if np.any(b.data == 0.0):
        raise ValueError("div: division by zero")
    out = Tensor(a.data / b.data)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb
    return _record(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0
    out = Tensor(a.data * mask)
    return _record(out, (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: nonpositive argument")
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def logabs(a):
    """log|a|, gradient 1/a. Used for actnorm log-determinants."""
    a = as_tensor(a)
    if np.any(a.data == 0.0):
        raise ValueError("logabs: zero argument")
    out = Tensor(np.log(np.abs(a.data)))
    return _record(out, (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data ** 2),))


def softplus(a):
    a = as_tensor(a)
    d = a.data
    val = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    out = Tensor(val)
    sig = 1.0 / (1.0 + np.exp(-d))
    return _record(out, (a,), lambda g: (g * sig,))


def clamp(a, lo, hi):
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    mask = (a.data > lo) & (a.data < hi)
    return _record(out, (a,), lambda g: (g * mask,))


def square(a):
    return mul(a, a)


# -- reductions ---------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)
    return _record(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m).sum(axis=axis, keepdims=True)
    val = (m + np.log(s)).squeeze(axis=axis)
    out = Tensor(val)
    soft = np.exp(a.data - m) / s

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)
    return _record(out, (a,), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)
    return _record(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    lse = logsumexp(a, axis=axis)
    return sub(a, _expand(lse, axis, a.shape))


def _expand(t, axis, target_shape):
    axis = axis % len(target_shape)
    return reshape(t, t.shape[:axis] + (1,) + t.shape[axis:])


# -- shape manipulation ---------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inv = np.argsort(axes)
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, range(offs[i], offs[i + 1]), axis=axis))
                     for i in range(len(tensors)))
    return _record(out, tuple(tensors), bw)


def split(a, sections, axis):
    """Split into equal `sections` along axis; returns a list of Tensors."""
    a = as_tensor(a)
    if a.shape[axis] % sections != 0:
        raise ValueError(f"split: axis size {a.shape[axis]} not divisible by {sections}")
    parts = np.split(a.data, sections, axis=axis)
    outs = []
    for i, p in enumerate(parts):
        out = Tensor(np.ascontiguousarray(p))

        def bw(g, i=i, shape=a.shape, axis=axis, sections=sections):
            full = np.zeros(shape)
            sl = [slice(None)] * len(shape)
            step = shape[axis] // sections
            sl[axis] = slice(i * step, (i + 1) * step)
            full[tuple(sl)] = g
            return (full,)
        outs.append(_record(out, (a,), bw))
    return outs


def narrow(a, axis, start, length):
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    out = Tensor(np.ascontiguousarray(a.data[tuple(sl)]))

    def bw(g):
        full = np.zeros(a.shape)
        full[tuple(sl)] = g
        return (full,)
    return _record(out, (a,), bw)


def gather_rows(a, idx):
    """Select rows of a 2D tensor: out[i] = a[idx[i]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)
    return _record(out, (a,), bw)


def take_cols(a, idx):
    """Select columns of a 2D tensor: out[:, j] = a[:, idx[j]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(np.ascontiguousarray(a.data[:, idx]))

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full.T, idx, g.T)
        return (full,)
    return _record(out, (a,), bw)


# -- linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g
    return _record(out, (a, b), bw)


def logabsdet(a):
    """log|det W| for a square matrix; gradient is inv(W).T."""
    a = as_tensor(a)
    sign, ld = np.linalg.slogdet(a.data)
    if sign == 0.0:
        raise ValueError("logabsdet: singular matrix")
    out = Tensor(np.asarray(ld))
    inv_t = np.linalg.inv(a.data).T
    return _record(out, (a,), lambda g: (g * inv_t,))


def mat_sandwich(x, d):
    """Per-channel map X -> D X D^T for x of shape (N, C, H, H); d constant."""
    x = as_tensor(x)
    dm = np.asarray(d, dtype=np.float64)
    out = Tensor(np.einsum("ij,ncjk,lk->ncil", dm, x.data, dm, optimize=True))

    def bw(g):
        return (np.einsum("ji,ncjk,kl->ncil", dm, g, dm, optimize=True), None)
    return _record(out, (x,), bw)


# -- conv / pooling --------------------------------------------------------------

def conv2d(x, w, b=None):
    """Stride-1 same-padding convolution; kernels 1x1 or 3x3."""
    x, w = as_tensor(x), as_tensor(w)
    y = backend.conv2d_forward(x.data, w.data)
    out = Tensor(y)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_grad_input(g, w.data, x.shape)
        gw = backend.conv2d_grad_weight(g, x.data, w.shape)
        return gx, gw
    out = _record(out, (x, w), bw)
    if b is not None:
        b = as_tensor(b)
        out = add(out, reshape(b, (1, b.shape[0], 1, 1)))
    return out


def avg_pool2d(x, k=2):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {k}")
    r = x.data.reshape(n, c, h // k, k, w // k, k)
    out = Tensor(r.mean(axis=(3, 5)))

    def bw(g):
        g = g[:, :, :, None, :, None] / (k * k)
        return (np.broadcast_to(g, (n, c, h // k, k, w // k, k)).reshape(n, c, h, w).copy(),)
    return _record(out, (x,), bw)


def squeeze2x2(x):
    """Space-to-channel 2x2 squeeze: out[:, 4c+2*di+dj, i, j] = x[:, c, 2i+di, 2j+dj]."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"squeeze2x2: odd spatial size {h}x{w}")
    r = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    y = r.transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h // 2, w // 2)
    out = Tensor(np.ascontiguousarray(y))

    def bw(g):
        gr = g.reshape(n, c, 2, 2, h // 2, w // 2).transpose(0, 1, 4, 2, 5, 3)
        return (np.ascontiguousarray(gr.reshape(n, c, h, w)),)
    return _record(out, (x,), bw)


def unsqueeze2x2(arr):
    """Inverse of squeeze2x2 on a raw array."""
    n, c4, h, w = arr.shape
    c = c4 // 4
    r = arr.reshape(n, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(r.reshape(n, c, 2 * h, 2 * w))


def flatten(x):
    x = as_tensor(x)
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
