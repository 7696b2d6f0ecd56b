"""Small dense-tensor engine with reverse-mode differentiation and Adam.

Everything is float64 numpy.  Broadcasting is limited to scalars and a
row vector added to (or multiplied with) a matrix; anything else is a
shape error.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.special import expit

CHECKPOINT_FORMAT = "conceptrec-params"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values, name=None):
    return Tensor(values, requires_grad=True, name=name)


def _result(data, parents, backward_fn):
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad = t.grad + g


def _check_binary(a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    # row vector broadcast over a matrix
    return g.sum(axis=0)


def _finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return data


# elementwise and linear ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, -_reduce_to(g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def scale(a, factor: float):
    a = as_tensor(a)
    factor = float(factor)

    def bw(g):
        _accumulate(a, g * factor)

    return _result(a.data * factor, (a,), bw)


def matmul(a, b):
    """Matrix product for 2-D/1-D operands (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError("matmul expects 1-D or 2-D operands")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 1:
                ga = np.outer(g, bd) if ad.ndim == 2 else g * bd
            else:
                ga = g @ bd.T
            _accumulate(a, ga)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g) if bd.ndim == 2 else g * ad
            else:
                gb = ad.T @ g
            _accumulate(b, gb)

    return _result(a.data @ b.data, (a, b), bw)


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot expects equal 1-D shapes, got {a.shape} and {b.shape}")
    return matmul(a, b)


def rowdot(a, b):
    """Row-wise dot product of two (n, k) matrices -> (n,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"rowdot expects equal 2-D shapes, got {a.shape} and {b.shape}")

    def bw(g):
        _accumulate(a, g[:, None] * b.data)
        _accumulate(b, g[:, None] * a.data)

    return _result(np.einsum("ij,ij->i", a.data, b.data), (a, b), bw)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")

    def bw(g):
        _accumulate(a, g.T)

    return _result(a.data.T.copy(), (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(data.copy(), (a,), bw)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            _accumulate(t, piece)

    return _result(data, ts, bw)


def take(a, index):
    """Gather rows (first axis) by integer index; repeated indices accumulate."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            _accumulate(a, full)

    return _result(a.data[index], (a,), bw)


def pick(a, index):
    """Row-wise gather from a matrix.

    A 1-D index gives out[i] = a[i, index[i]]; an (n, k) index gives
    out[i, j] = a[i, index[i, j]].
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.ndim not in (1, 2) or index.shape[0] != a.shape[0]:
        raise ShapeError("pick expects a matrix and column indices for each row")
    rows = np.arange(a.shape[0]) if index.ndim == 1 else np.arange(a.shape[0])[:, None]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, index), g)
            _accumulate(a, full)

    return _result(a.data[rows, index], (a,), bw)


# nonlinearities


def sigmoid(a):
    a = as_tensor(a)
    s = expit(a.data)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _result(s, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    return _result(t, (a,), bw)


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        e = _finite(np.exp(a.data), "exp")

    def bw(g):
        _accumulate(a, g * e)

    return _result(e, (a,), bw)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")

    def bw(g):
        _accumulate(a, g / a.data)

    return _result(np.log(a.data), (a,), bw)


def softplus(a):
    """log(1 + exp(a)), computed stably."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = expit(x)

    def bw(g):
        _accumulate(a, g * s)

    return _result(out, (a,), bw)


def _check_tau(tau):
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def softmax(a, tau=1.0, axis=-1):
    """exp(a / tau) normalized along axis, with max subtraction."""
    a = as_tensor(a)
    tau = _check_tau(tau)
    z = a.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        _accumulate(a, p * (g - inner) / tau)

    return _result(p, (a,), bw)


def log_softmax(a, tau=1.0, axis=-1):
    a = as_tensor(a)
    tau = _check_tau(tau)
    z = a.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        _accumulate(a, (g - p * g.sum(axis=axis, keepdims=True)) / tau)

    return _result(out, (a,), bw)


# reductions


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


# recurrent cell


def lstm_cell(x, h, c, weights):
    """One LSTM step.

    weights = (W_x, W_h, b) with W_x: (in, 4H), W_h: (H, 4H), b: (4H,).
    Gate layout along the last axis is [input, forget, candidate, output].
    Works on a single vector or a batch of rows.
    """
    w_x, w_h, b = weights
    hidden = w_h.shape[0]
    z = add(add(matmul(x, w_x), matmul(h, w_h)), b)
    parts = [_slice_last(z, k * hidden, (k + 1) * hidden) for k in range(4)]
    i, f, gc, o = sigmoid(parts[0]), sigmoid(parts[1]), tanh(parts[2]), sigmoid(parts[3])
    c_new = add(mul(f, c), mul(i, gc))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def _slice_last(a, start, stop):
    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            _accumulate(a, full)

    return _result(a.data[..., start:stop].copy(), (a,), bw)


# autodiff driver


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate .grad on every tensor that requires grad and feeds `loss`."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                # free interior buffers; leaves keep their gradients
                node.grad = None


def grad(loss: Tensor, params):
    """Run backward and return gradients (zeros for params not reached)."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# initialization and optimization


def init_uniform(rng: np.random.Generator, shape, fan_in=None, name=None):
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in defaults to shape[0]."""
    fan_in = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeError("one gradient per parameter expected")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr == 0.0:
                continue
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params, grads, state: Adam):
    state.step(grads)
    return params


# checkpoints


def save_params(path, params: dict, meta=None):
    """Write named tensors as JSON with a versioned header."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))


def load_params(path):
    """Returns (dict name -> Tensor with requires_grad, meta)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for name, entry in doc["params"].items():
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params[name] = parameter(values, name=name)
    return params, doc.get("meta", {})
