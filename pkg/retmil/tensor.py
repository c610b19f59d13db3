"""
Dense tensors with reverse mode automatic differentiation.

A Tensor wraps a numpy array of rank 0-3. Every operation on tensors that
require gradients records its parents and a closure that maps the output
gradient to one gradient per parent. `Tensor.backward` walks that graph in
reverse topological order and accumulates into the `grad` of the leaves.

Only two kinds of broadcasting are supported: identical shapes, and a rank 0
scalar against anything. Everything else is a DimensionError, which keeps
the gradient rules short enough to check by eye.

The precision (32 or 64 bit) is a module level setting, changed with
`set_precision` or temporarily with the `precision` context manager. Tests
that compare against finite differences run in 64 bit.
"""

from contextlib import contextmanager
import threading
import weakref

import numpy as np

from .errors import ConfigError, DimensionError, InputError, NumericError, StateError


PRECISIONS = {
    "f32": np.float32,
    "f64": np.float64,
}

MAX_RANK = 3


class _State:
    dtype = np.float32
    grad_enabled = True


_state = _State()


def set_precision(name):
    try:
        _state.dtype = PRECISIONS[name]
    except KeyError:
        raise ConfigError(f"Unknown precision {name!r}, expected one of {sorted(PRECISIONS)}")


def get_precision():
    return next(name for name, dtype in PRECISIONS.items() if dtype == _state.dtype)


@contextmanager
def precision(name):
    "Temporarily switch precision for newly created tensors."
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextmanager
def no_grad():
    "Operations inside don't record a graph, so intermediates are freed right away."
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def grad_enabled():
    return _state.grad_enabled


# Allocation metering

_meters = []
_meter_lock = threading.Lock()


class AllocationMeter:

    """
    Counts the bytes held by tensors created while the meter is active.
    Bytes are released again when the tensor is garbage collected, so
    `peak_bytes` is the high water mark of live tensor data. Only tensor
    data counts, not gradients or interpreter overhead.

    An optional `limit` makes allocations beyond it raise MemoryError.
    """

    def __init__(self, limit=None):
        self.limit = limit
        self.current_bytes = 0
        self.peak_bytes = 0

    def __enter__(self):
        with _meter_lock:
            _meters.append(self)
        return self

    def __exit__(self, *exc):
        with _meter_lock:
            _meters.remove(self)

    def check(self, nbytes):
        if self.limit is not None and self.current_bytes + nbytes > self.limit:
            raise MemoryError(f"Allocating {nbytes} bytes would exceed the limit of {self.limit} "
                              f"({self.current_bytes} bytes in use)")

    def allocate(self, nbytes):
        self.check(nbytes)
        self.current_bytes += nbytes
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)

    def release(self, nbytes):
        self.current_bytes -= nbytes
        assert self.current_bytes >= 0, "Released more bytes than were allocated"

    def __repr__(self):
        return f"AllocationMeter(current={self.current_bytes}, peak={self.peak_bytes})"


def _reserve(nbytes):
    "Make sure an allocation of the given size would be allowed, before doing it."
    with _meter_lock:
        for meter in _meters:
            meter.check(nbytes)


def _release(meters, nbytes):
    with _meter_lock:
        for meter in meters:
            meter.release(nbytes)


def _track(tensor):
    if not _meters:
        return
    nbytes = tensor.data.nbytes
    with _meter_lock:
        meters = list(_meters)
        for meter in meters:
            meter.allocate(nbytes)
    weakref.finalize(tensor, _release, meters, nbytes)


class Tensor:

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False):
        data = np.array(data, dtype=_state.dtype)
        self._setup(data, requires_grad, (), None, "leaf")

    def _setup(self, data, requires_grad, parents, backward, op):
        if data.ndim > MAX_RANK:
            raise DimensionError(f"Tensors of rank {data.ndim} are not supported (max {MAX_RANK})")
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward
        _track(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self):
        return tensor_sum(self)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{grad})"

    def backward(self, grad=None):
        """
        Accumulate gradients of this tensor into all leaves that require them.
        Without an explicit `grad` the tensor must hold a single value.
        """
        if not self.requires_grad:
            raise StateError("backward() called on a tensor that doesn't require gradients")
        if grad is None:
            if self.data.size != 1:
                raise StateError(f"backward() on a tensor of shape {self.shape} needs an explicit gradient")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _topological_order(root):
    "Parents before children. Iterative, since graphs can get deep."
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(data, parents, backward, op):
    "Wrap the output of an operation, hooking it into the graph if needed."
    if not np.all(np.isfinite(data)):
        raise NumericError(f"Non-finite values produced by {op}", {"shape": data.shape})
    track = _state.grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out._setup(np.asarray(data), track, tuple(parents) if track else (),
               backward if track else None, op)
    return out


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_operands(a, b, op):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


# Linear algebra

def matmul(a, b):
    "Matrix product of two rank 2 tensors."
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects two matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _reserve(a.shape[0] * b.shape[1] * a.data.itemsize)
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), backward, "matmul")


def transpose(x):
    "Swap the last two axes."
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"Can't transpose a tensor of shape {x.shape}")

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _result(np.swapaxes(x.data, -1, -2), (x,), backward, "transpose")


def reshape(x, *shape):
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e))
    original = x.shape

    def backward(g):
        return (g.reshape(original),)

    return _result(data, (x,), backward, "reshape")


def index_select(x, index):
    "Basic or advanced numpy indexing. The result is a copy."
    data = np.array(x.data[index])
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _result(data, (x,), backward, "index")


def stack(tensors):
    "Stack equally shaped tensors along a new leading axis."
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("Can't stack an empty list")
    if any(t.shape != tensors[0].shape for t in tensors):
        raise DimensionError(f"stack: shapes differ: {sorted({t.shape for t in tensors})}")

    def backward(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors]), tensors, backward, "stack")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(data, tensors, backward, "concat")


def tensor_sum(x):
    x = as_tensor(x)

    def backward(g):
        return (np.full(x.shape, g, dtype=g.dtype),)

    return _result(np.asarray(x.data.sum()), (x,), backward, "sum")


# Elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_operands(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_operands(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    "Hadamard product."
    a, b = as_tensor(a), as_tensor(b)
    _check_operands(a, b, "mul")
    a_data, b_data = a.data, b.data

    def backward(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _result(a_data * b_data, (a, b), backward, "mul")


def scale(x, factor):
    "Multiply by a constant number."
    x = as_tensor(x)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _result(x.data * factor, (x,), backward, "scale")


def _sigmoid(x):
    # The tanh form doesn't overflow for large negative x.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), backward, "tanh")


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), backward, "sigmoid")


def swish(x):
    "x * sigmoid(x)"
    x = as_tensor(x)
    x_data = x.data
    s = _sigmoid(x_data)

    def backward(g):
        return (g * (s + x_data * s * (1.0 - s)),)

    return _result(x_data * s, (x,), backward, "swish")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _result(out, (x,), backward, "exp")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "hadamard": mul,
    "scale": scale,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "swish": swish,
    "exp": exp,
}


def elementwise(op, *args):
    try:
        func = ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"Unknown elementwise operation {op!r}")
    return func(*args)


# Fused operations with hand written gradients

def softmax(x):
    "Softmax along the last axis, with the max subtracted for stability."
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs at least one element, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


softmax_row = softmax


def group_norm(x, groups, eps=1e-5, affine=None):
    """
    Normalize each row of an n x d matrix within `groups` equally sized
    groups of columns, then apply the optional (gain, bias) affine map.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"group_norm expects a matrix, got shape {x.shape}")
    n, d = x.shape
    if groups < 1 or d % groups:
        raise ConfigError(f"Can't split {d} features into {groups} groups")
    if not eps > 0:
        raise ConfigError(f"GroupNorm eps must be positive, got {eps}")
    grouped = x.data.reshape(n, groups, d // groups)
    centered = grouped - grouped.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = (centered * inv_std).reshape(n, d)

    parents = [x]
    if affine is None:
        out = normed
    else:
        gain, bias = (as_tensor(a) for a in affine)
        if gain.shape != (d,) or bias.shape != (d,):
            raise DimensionError(f"GroupNorm affine parameters must have shape ({d},)")
        parents += [gain, bias]
        out = normed * gain.data + bias.data

    def backward(g):
        g_normed = g if affine is None else g * gain.data
        gh = g_normed.reshape(n, groups, d // groups)
        xh = normed.reshape(n, groups, d // groups)
        gx = inv_std * (gh - gh.mean(axis=-1, keepdims=True)
                        - xh * (gh * xh).mean(axis=-1, keepdims=True))
        grads = [gx.reshape(n, d)]
        if affine is not None:
            grads += [(g * normed).sum(axis=0), g.sum(axis=0)]
        return grads

    return _result(out, parents, backward, "group_norm")


def rotate_pairs(x, cos, sin):
    "Rotate consecutive coordinate pairs (x0, x1), (x2, x3)... by the given angles."
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope(x, angles):
    """
    Rotary encoding of an n x k matrix, given an n x k/2 matrix of angles.
    Rotations are isometries, so the gradient is just the inverse rotation.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] % 2:
        raise ConfigError(f"Rotary encoding needs an even number of columns, got shape {x.shape}")
    angles = np.asarray(angles)
    if angles.shape != (x.shape[0], x.shape[1] // 2):
        raise DimensionError(f"Angles of shape {angles.shape} don't fit input of shape {x.shape}")
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)

    def backward(g):
        return (rotate_pairs(g, cos, -sin),)

    return _result(rotate_pairs(x.data, cos, sin), (x,), backward, "rope")


def cross_entropy_logits(logits, label):
    "-log softmax(logits)[label], as a rank 0 tensor."
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise DimensionError(f"Expected a vector of logits, got shape {logits.shape}")
    n_classes = logits.shape[0]
    if not 0 <= label < n_classes:
        raise InputError(f"Label {label} is out of range for {n_classes} classes")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    total = e.sum()
    loss = np.log(total) - z[label]
    probs = e / total

    def backward(g):
        grad = probs.copy()
        grad[label] -= 1.0
        return (g * grad,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")
