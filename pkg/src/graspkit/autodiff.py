"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its parents and a closure mapping the output
gradient to parent gradients.  Constant subgraphs (no parent requires a
gradient) are not recorded at all.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import expit

ACOS_MARGIN = 1e-7


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        for leaf, g in _backprop(self).items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------- graph


def topological_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from ``output`` that require grad, inputs before consumers."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(output: Tensor) -> dict:
    if output.data.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {output.shape}")
    grads = {id(output): np.ones_like(output.data)}
    leaves = {}
    for node in reversed(topological_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


def grad(output: Tensor, inputs) -> list[np.ndarray]:
    """Gradients of scalar ``output`` w.r.t. each of ``inputs``.

    Inputs the output does not depend on get all-zero gradients.
    """
    leaves = _backprop(output)
    return [leaves.get(x, np.zeros_like(x.data)) for x in inputs]


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float):
    a = as_tensor(a)
    return _result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the leading axes into one product
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------- shape


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ValueError(f"concat: shape mismatch {shapes}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _result(out, tuple(tensors),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ValueError(f"broadcast: shape mismatch {a.shape} vs {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def reshape(a, shape):
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a, idx):
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice)) for p in parts)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), backward, "getitem")


def take(a, indices, axis=0):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def backward(g):
        out = np.zeros(np.moveaxis(a.data, axis, 0).shape)
        np.add.at(out, indices, np.moveaxis(g, list(range(axis, axis + indices.ndim)),
                                            list(range(indices.ndim))))
        return (np.moveaxis(out, 0, axis),)

    return _result(np.take(a.data, indices, axis=axis), (a,), backward, "take")


# ---------------------------------------------------------------- elementwise


def relu(a):
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def sigmoid(a):
    a = as_tensor(a)
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,), "exp")


def sqrt(a):
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _result(s, (a,), lambda g: (g * 0.5 / s,), "sqrt")


def tabs(a):
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is zero wherever clipping is active."""
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (a.data >= lo_) & (a.data <= hi_)
    return _result(np.clip(a.data, lo_, hi_), (a,), lambda g: (g * inside,), "clamp")


def acos(a):
    """arccos with the input clamped to [-1+1e-7, 1-1e-7]."""
    a = as_tensor(a)
    lo, hi = -1.0 + ACOS_MARGIN, 1.0 - ACOS_MARGIN
    x = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.arccos(x), (a,), lambda g: (-g * inside / np.sqrt(1.0 - x * x),), "acos")


# ---------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def max_pool_over_points(a, axis=-2):
    """Max over the point axis; the gradient goes to the first maximizer."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result(np.squeeze(out, axis=axis), (a,), backward, "max_pool")


def batch_norm_eval(x, running_mean, running_var, gamma, beta, eps=1e-5):
    """Inference-mode batch norm over the last axis with frozen statistics."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    xhat = (x.data - running_mean) * inv

    def backward(g):
        return (g * gamma.data * inv,
                _unbroadcast(g * xhat, gamma.shape),
                _unbroadcast(g, beta.shape))

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "batch_norm")


def bn_relu(x, running_mean, running_var, gamma, beta, eps=1e-5):
    """``relu(batch_norm_eval(x))`` as one node; stores only the output."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    scale = gamma.data * inv
    out = x.data * scale
    out += beta.data - running_mean * scale
    np.maximum(out, 0.0, out=out)

    def backward(g):
        gm = g * (out > 0)
        flat_g = gm.reshape(-1, gm.shape[-1])
        sum_g = flat_g.sum(axis=0)
        sum_gx = np.einsum("nc,nc->c", flat_g, x.data.reshape(flat_g.shape))
        g_gamma = _unbroadcast(inv * (sum_gx - running_mean * sum_g), gamma.shape)
        return gm * scale, g_gamma, _unbroadcast(sum_g, beta.shape)

    return _result(out, (x, gamma, beta), backward, "bn_relu")


def dense_bn_relu_max(x, W, b, running_mean, running_var, gamma, beta, eps=1e-5):
    """``max_pool_over_points(relu(batch_norm_eval(x @ W + b)))`` for x of shape (B, N, C_in).

    Only the per-channel argmax rows are kept for the backward pass, so the
    (B, N, C_out) activation is never stored.  Ties go to the first point.
    """
    x, W, b, gamma, beta = (as_tensor(t) for t in (x, W, b, gamma, beta))
    if x.ndim != 3 or x.shape[-1] != W.shape[0]:
        raise ValueError(f"dense_bn_relu_max: shape mismatch {x.shape} vs {W.shape}")
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    scale = gamma.data * inv
    shift = beta.data + (b.data - running_mean) * scale
    B, N, _ = x.shape
    C = W.shape[1]
    WsT = np.ascontiguousarray((W.data * scale).T)
    arg = np.empty((B, C), dtype=np.intp)
    best = np.empty((B, C))
    rows = np.arange(C)
    for i in range(B):
        hT = WsT @ x.data[i].T  # (C, N), contiguous rows for argmax
        arg[i] = hT.argmax(axis=1)
        best[i] = hT[rows, arg[i]]
    best += shift
    out = np.maximum(best, 0.0)

    def backward(g):
        xs = x.data[np.arange(B)[:, None], arg]  # (B, C, C_in)
        live = g * (best > 0)
        pre = np.einsum("bck,kc->bc", xs, W.data) + b.data
        xhat = (pre - running_mean) * inv
        d_pre = live * scale
        # scatter d_pre * W[:, c] onto the argmax rows
        flat_rows = (np.arange(B)[:, None] * N + arg).reshape(-1)
        S = sparse.csr_matrix((d_pre.reshape(-1), (flat_rows, np.tile(rows, B))), shape=(B * N, C))
        gx = np.asarray(S @ W.data.T).reshape(x.shape)
        gW = np.einsum("bck,bc->kc", xs, d_pre)
        return (gx, gW, d_pre.sum(axis=0), (live * xhat).sum(axis=0), live.sum(axis=0))

    return _result(out, (x, W, b, gamma, beta), backward, "dense_max")


# ---------------------------------------------------------------- rotations

_SKEW_BASIS = np.array([
    [[0, 0, 0], [0, 0, -1], [0, 1, 0]],
    [[0, 0, 1], [0, 0, 0], [-1, 0, 0]],
    [[0, -1, 0], [1, 0, 0], [0, 0, 0]],
], dtype=np.float64)

_SERIES_CUTOFF = 0.05


def _skew(r):
    return np.einsum("...k,kij->...ij", r, _SKEW_BASIS)


def _rodrigues_coeffs(theta):
    """a=sin t/t, b=(1-cos t)/t^2 and alpha=a'/t, beta=b'/t, series near zero."""
    small = theta < _SERIES_CUTOFF
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1 - t2 / 6 + t2 ** 2 / 120 - t2 ** 3 / 5040, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24 + t2 ** 2 / 720 - t2 ** 3 / 40320, (1 - np.cos(t)) / t ** 2)
    alpha = np.where(small, -1 / 3 + t2 / 30 - t2 ** 2 / 840 + t2 ** 3 / 45360,
                     (t * np.cos(t) - np.sin(t)) / t ** 3)
    beta = np.where(small, -1 / 12 + t2 / 180 - t2 ** 2 / 6720 + t2 ** 3 / 453600,
                    (t * np.sin(t) - 2 * (1 - np.cos(t))) / t ** 4)
    return a, b, alpha, beta


def rodrigues(r) -> np.ndarray:
    """Rotation matrices for axis-angle vectors of shape (..., 3), as plain arrays."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    a, b, _, _ = _rodrigues_coeffs(theta)
    K = _skew(r)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def axis_angle_to_rotation(r):
    """Differentiable Rodrigues map (..., 3) -> (..., 3, 3).  Zero maps to I exactly."""
    r = as_tensor(r)
    theta = np.linalg.norm(r.data, axis=-1)
    a, b, alpha, beta = _rodrigues_coeffs(theta)
    K = _skew(r.data)
    K2 = K @ K
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2

    def backward(g):
        # dR/dr_k = alpha r_k K + a E_k + beta r_k K^2 + b (E_k K + K E_k)
        gK = np.einsum("...ij,...ij->...", g, K)
        gK2 = np.einsum("...ij,...ij->...", g, K2)
        gE = np.einsum("...ij,kij->...k", g, _SKEW_BASIS)
        EK = np.einsum("kij,...jl->...kil", _SKEW_BASIS, K)
        KE = np.einsum("...ij,kjl->...kil", K, _SKEW_BASIS)
        gsym = np.einsum("...ij,...kij->...k", g, EK + KE)
        out = ((alpha * gK + beta * gK2)[..., None] * r.data
               + a[..., None] * gE + b[..., None] * gsym)
        return (out,)

    return _result(R, (r,), backward, "rodrigues")


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Returns (new_params, new_state); inputs untouched."""
    if not state.m:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], state.t)
    t = state.t + 1
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"adam_step: shape mismatch {p.shape} vs {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


class Adam:
    """Adam over a list of leaf tensors, reading ``.grad`` (``None`` counts as zero)."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if self.clip_norm is not None:
            # rescale the joint gradient to at most clip_norm
            norm = np.sqrt(sum(float(np.vdot(g, g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        if self.lr == 0.0:
            # keep bit-identical parameters; only the clock advances
            _, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                      0.0, self.beta1, self.beta2, self.eps)
            return
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, value in zip(self.params, new):
            p.data = value


# ---------------------------------------------------------------- checks


def finite_difference_check(f, x, eps=1e-6, floor=1e-3):
    """Max element-wise relative error between backward() and central differences.

    ``f`` maps a Tensor of ``x``'s shape to a scalar Tensor.  Elements whose
    gradient is below ``floor`` times the largest gradient magnitude are
    measured against that floor instead of their own size.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    (analytic,) = grad(f(leaf), [leaf])
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += eps
        xm[i] -= eps
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2 * eps)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"C2GCKPT1"


def save_checkpoint(path, arrays: dict, manifest: dict):
    """Write ``magic | u32 manifest length | manifest JSON | float64 LE blob``.

    ``arrays`` maps names to arrays; their shapes and blob offsets are added
    to the manifest under ``"tensors"``.
    """
    entries, chunks, offset = [], [], 0
    for name in arrays:
        a = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    manifest = dict(manifest, tensors=entries)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    manifest = json.loads(raw[12:12 + n].decode("utf-8"))
    blob = np.frombuffer(raw[12 + n:], dtype="<f8")
    arrays = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = blob[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return manifest, arrays
