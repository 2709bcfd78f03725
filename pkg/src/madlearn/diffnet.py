"""Small dense-tensor autodiff core, the SELU encoder, AdamW and Polyak averaging.

Everything is float64. A computation graph lives for one batch: ``forward``
builds it, ``backward`` consumes it once and drops the references.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

CHECKPOINT_MAGIC = b"MADNET1"


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    """Raised when a graph is misused, e.g. differentiated twice."""


class NumericError(ArithmeticError):
    """Raised when a non-finite value would enter parameters or a loss."""


class Tensor:
    """Array value plus the bookkeeping needed for reverse-mode differentiation."""

    __slots__ = ("data", "parents", "grad_fn", "requires_grad", "consumed")

    def __init__(self, data, parents=(), grad_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        # constant subexpressions keep no graph
        self.parents = parents if self.requires_grad else ()
        self.grad_fn = grad_fn if self.requires_grad else None
        self.consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def numpy(self):
        return self.data

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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    # sum out axes that were broadcast in the forward op
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, (a, b), grad_fn)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(a.data / b.data, (a, b), grad_fn)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor(a.data @ b.data, (a, b), grad_fn)


def square(a):
    def grad_fn(g):
        return (2.0 * g * a.data,)

    return Tensor(a.data * a.data, (a,), grad_fn)


def relu(a):
    # derivative at exactly 0 is taken as 0
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, 0.0), (a,), grad_fn)


def selu(a):
    x = a.data
    pos = x > 0
    neg_exp = SELU_ALPHA * np.exp(np.minimum(x, 0.0))
    out = SELU_LAMBDA * np.where(pos, x, neg_exp - SELU_ALPHA)

    def grad_fn(g):
        return (g * SELU_LAMBDA * np.where(pos, 1.0, neg_exp),)

    return Tensor(out, (a,), grad_fn)


def scatter_rows(values, index, n_rows):
    """Sum rows of ``values`` into ``n_rows`` buckets given by ``index``."""
    out = np.zeros((n_rows,) + values.shape[1:])
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    sorted_ix = index[order]
    starts = np.flatnonzero(np.concatenate([[True], sorted_ix[1:] != sorted_ix[:-1]]))
    out[sorted_ix[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def take_rows(a, index):
    """Row gather ``a[index]``; the backward pass scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError("row index out of range")

    def grad_fn(g):
        return (scatter_rows(g, index, n),)

    return Tensor(a.data[index], (a,), grad_fn)


def slice_rows(a, start, stop):
    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    return Tensor(a.data[start:stop], (a,), grad_fn)


def max_last(a):
    """Max over the last axis. Ties go to the lowest index."""
    idx = np.argmax(a.data, axis=-1)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        return (ga,)

    return Tensor(out, (a,), grad_fn)


def sum_last(a):
    def grad_fn(g):
        return (np.broadcast_to(g[..., None], a.shape).copy(),)

    return Tensor(a.data.sum(axis=-1), (a,), grad_fn)


def mean_last(a):
    n = a.shape[-1]

    def grad_fn(g):
        return (np.broadcast_to(g[..., None] / n, a.shape).copy(),)

    return Tensor(a.data.mean(axis=-1), (a,), grad_fn)


def mean(a):
    n = a.data.size

    def grad_fn(g):
        return (np.full(a.shape, g / n),)

    return Tensor(a.data.mean(), (a,), grad_fn)


def _toposort(root):
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def grad(loss, wrt):
    """Gradients of a scalar ``loss`` with respect to the tensors in ``wrt``.

    The graph behind ``loss`` is consumed: a second call raises GraphError.
    """
    if loss.consumed:
        raise GraphError("backward already ran on this graph")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in order:
        g = grads.pop(id(node), None) if node.grad_fn is not None else grads.get(id(node))
        if node.grad_fn is None or g is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
    # drop the graph
    for node in order:
        node.consumed = True
        node.parents = ()
        node.grad_fn = None
    return out


# -- encoder -----------------------------------------------------------------


@dataclass
class NetworkParams:
    """Weights of a SELU multilayer perceptron with a linear output layer."""

    layers: list  # [(W [in, out], b [out]), ...]

    def __post_init__(self):
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError("layer dimensions do not chain")
        for w, b in self.layers:
            if b.shape != (w.shape[1],):
                raise ShapeError("bias does not match weight")

    @property
    def input_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def latent_dim(self):
        return self.layers[-1][0].shape[1]

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[1] for w, _ in self.layers]

    def arrays(self):
        return [a for layer in self.layers for a in layer]

    def copy(self):
        return NetworkParams([(w.copy(), b.copy()) for w, b in self.layers])

    def num_parameters(self):
        return sum(a.size for a in self.arrays())


def init_params(input_dim, latent_dim=256, hidden=(512, 512), seed=0):
    """LeCun-uniform weights (variance 1/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, latent_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(3.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return NetworkParams(layers)


class Forward:
    """Output of :func:`forward`: the latent tensor plus the parameter leaves."""

    def __init__(self, output, leaves):
        self.output = output
        self.leaves = leaves


def forward(params, batch):
    """Apply the encoder row-wise and record the graph for :func:`backward`."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch of shape {batch.shape} does not fit input width {params.input_dim}"
        )
    leaves = [Tensor(a, requires_grad=True) for a in params.arrays()]
    h = Tensor(batch)
    n = len(params.layers)
    for k in range(n):
        h = add(matmul(h, leaves[2 * k]), leaves[2 * k + 1])
        if k < n - 1:
            h = selu(h)
    if not np.isfinite(h.data).all():
        raise NumericError("encoder produced non-finite values")
    return Forward(h, leaves)


def backward(loss, fwd):
    """Gradients of ``loss`` aligned with ``NetworkParams.layers``."""
    flat = grad(loss, fwd.leaves)
    return [(flat[2 * k], flat[2 * k + 1]) for k in range(len(flat) // 2)]


def encode(params, batch):
    """Graph-free forward pass (evaluation, planning, target networks)."""
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim == 1:
        return encode(params, h[None])[0]
    if h.shape[-1] != params.input_dim:
        raise ShapeError(f"batch of shape {h.shape} does not fit input width {params.input_dim}")
    n = len(params.layers)
    for k, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if k < n - 1:
            h = SELU_LAMBDA * np.where(h > 0, h, SELU_ALPHA * np.expm1(np.minimum(h, 0.0)))
    return h


# -- optimisation ------------------------------------------------------------


@dataclass
class AdamWState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(a) for a in params.arrays()]
        state.second_moment = [np.zeros_like(a) for a in params.arrays()]
        return state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for layer in grads for g in layer)))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return [(gw * scale, gb * scale) for gw, gb in grads]


def adamw_step(params, grads, state):
    """Decoupled-weight-decay Adam, updating ``params`` and ``state`` in place.

    Returns ``(params, state)``. A non-finite gradient leaves both untouched.
    """
    flat_grads = [g for layer in grads for g in layer]
    arrays = params.arrays()
    if len(flat_grads) != len(arrays):
        raise ShapeError("gradient list does not match parameters")
    for a, g in zip(arrays, flat_grads):
        if a.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {a.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient, update rejected")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(a) for a in arrays]
        state.second_moment = [np.zeros_like(a) for a in arrays]

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    lr = state.learning_rate
    for a, g, m, v in zip(arrays, flat_grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            a *= 1.0 - lr * state.weight_decay
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        # step = lr * (m / bc1) / (sqrt(v / bc2) + eps)
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        a -= tmp
    return params, state


def polyak_update(target, online, beta):
    """In place ``target <- (1 - beta) * target + beta * online``; returns target."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"polyak beta must lie in (0, 1], got {beta}")
    if target.dims != online.dims:
        raise ShapeError(f"architectures differ: {target.dims} vs {online.dims}")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - beta
        t += beta * o
    return target


# -- checkpoints -------------------------------------------------------------


def save_params(params, path):
    """Little-endian: magic, layer count, (in, out) per layer, then float64 W and b."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(params.layers))]
    for w, _ in params.layers:
        chunks.append(struct.pack("<II", *w.shape))
    for w, b in params.layers:
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path):
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a MADNET1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    try:
        (n_layers,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", raw, pos))
            pos += 8
    except struct.error as exc:
        raise ValueError(f"{path}: truncated header") from exc
    layers = []
    for n_in, n_out in shapes:
        need = 8 * (n_in * n_out + n_out)
        if pos + need > len(raw):
            raise ValueError(f"{path}: truncated parameter data")
        w = np.frombuffer(raw, dtype="<f8", count=n_in * n_out, offset=pos).reshape(n_in, n_out)
        pos += 8 * n_in * n_out
        b = np.frombuffer(raw, dtype="<f8", count=n_out, offset=pos)
        pos += 8 * n_out
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return NetworkParams(layers)
