"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its parents and a closure mapping the output
gradient to one gradient per parent.  ``Tensor.backward`` walks the graph
once in reverse topological order and accumulates into leaf ``.grad``
buffers.  Broadcasting is deliberately narrow: identical shapes, a scalar,
or a trailing-axis bias vector.  Anything else needs an explicit
``expand``/``reshape`` so gradient code stays easy to audit.
"""

import contextlib
import math
import threading

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _make(cls, data, parents, backward, op):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values (shape {data.shape})")
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
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

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- reverse pass --------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def expand(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return expand(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A leaf tensor that the optimizer updates."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def _const(x):
    return x if isinstance(x, Tensor) else Tensor(_as_array(x))


def _check_binary(a, b, op):
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return
    if a.ndim == 1 and b.ndim >= 1 and a.shape[0] == b.shape[-1]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a, b):
    a, b = _const(a), _const(b)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b):
    a, b = _const(a), _const(b)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub"
    )


def mul(a, b):
    a, b = _const(a), _const(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def power(a, p):
    p = float(p)
    ad = a.data
    return Tensor._make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),), "pow")


def matmul(a, b):
    """Matrix product over the last two axes.

    Leading (batch) axes must match exactly, or ``b`` may be a plain
    matrix shared across the batch of ``a``.
    """
    a, b = _const(a), _const(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        def backward(g):
            da = g @ bd.T
            db = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return da, db
    elif a.shape[:-2] == b.shape[:-2]:
        def backward(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g
    else:
        raise DimensionError(f"matmul: batch axes differ, {a.shape} @ {b.shape}")
    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(a.shape[ax] for ax in axes)
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def expand(a, shape):
    """Broadcast axes of extent 1 up to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise DimensionError(f"expand: rank mismatch {a.shape} -> {shape}")
    axes = []
    for i, (src, dst) in enumerate(zip(a.shape, shape)):
        if src != dst:
            if src != 1:
                raise DimensionError(f"expand: cannot broadcast {a.shape} to {shape}")
            axes.append(i)
    axes = tuple(axes)
    return Tensor._make(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (g.sum(axis=axes, keepdims=True),),
        "expand",
    )


def getitem(a, idx):
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._make(a.data[idx], (a,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [_const(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat"
    )


def stack(tensors, axis=0):
    tensors = [_const(t) for t in tensors]
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


# -- elementwise maps ---------------------------------------------------

def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return Tensor._make(out, (a,), lambda g: (g / ad,), "log")


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    # split on sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(np.asarray(a.data, dtype=np.float64).reshape(-1)).reshape(a.shape)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    ad = a.data
    return Tensor._make(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),), "relu")


def softplus(a):
    """log(1 + exp(x)), stable for large |x|."""
    ad = a.data
    s = _sigmoid(ad.reshape(-1)).reshape(ad.shape)
    return Tensor._make(np.logaddexp(0.0, ad), (a,), lambda g: (g * s,), "softplus")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh approximation of GELU (smooth everywhere)."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return Tensor._make(out, (a,), backward, "gelu")


def activation(x, kind):
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "gelu": gelu}[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    return fn(_const(x))


def softmax(a, axis=-1):
    a = _const(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward, "softmax")


def log_softmax(a, axis=-1):
    a = _const(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gamma.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, g.shape[-1])
        dgamma = (flat * xhat.reshape(flat.shape)).sum(axis=0)
        dbeta = flat.sum(axis=0)
        return dx, dgamma, dbeta

    return Tensor._make(xhat * gd + beta.data, (x, gamma, beta), backward, "layer_norm")


# -- vector utilities ---------------------------------------------------

EPS_NORM = 1e-12


def cosine_sim(u, v, eps=EPS_NORM):
    """Cosine similarity of two equal-length vectors; 0 when either norm < eps.

    Uses ``dot / sqrt(|u|^2 |v|^2)`` so that ``cosine_sim(u, u)`` is exactly 1.
    """
    u = _as_array(u).reshape(-1)
    v = _as_array(v).reshape(-1)
    if u.shape != v.shape:
        raise DimensionError(f"cosine_sim: length {u.size} vs {v.size}")
    if u.size == 0:
        raise DimensionError("cosine_sim: empty vectors")
    nu = float(u @ u)
    nv = float(v @ v)
    if math.sqrt(nu) < eps or math.sqrt(nv) < eps:
        return 0.0
    c = float(u @ v) / math.sqrt(nu * nv)
    return min(1.0, max(-1.0, c))
