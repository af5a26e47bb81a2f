"""Reverse-mode autodiff on dense float64 arrays.

Just enough operator coverage for small residual convnets and MLPs:
elementwise arithmetic, matmul, conv2d, batch norm, relu, softmax and
reductions. Every op records itself on the implicit tape (the graph of
OpRecord nodes hanging off each Tensor); backward() replays the records
in reverse topological order exactly once each.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, NumericsError, StateError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval passes, SAM perturbation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class OpRecord:
    """One tape entry: the inputs of an op and its backward rule.

    backward_fn maps the output gradient to one gradient array per input
    (None for inputs that do not need one).
    """

    __slots__ = ("name", "inputs", "backward_fn")

    def __init__(self, name: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.name = name
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, name: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{name}'")
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = OpRecord(name, inputs, backward_fn)
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if g is None or not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate .grad on every gradient-tracked tensor reachable from `loss`.

    Gradients accumulate across calls; the caller zeroes between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological order over the op graph
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._op is not None:
            for parent in node._op.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._op is None:
            _accumulate(node, g)
            continue
        input_grads = node._op.backward_fn(g)
        for parent, pg in zip(node._op.inputs, input_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._op is None:
                _accumulate(parent, pg)
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    for node in order:
        if node._op is None and node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise NumericsError("non-finite gradient after backward")


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, "add", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, "mul", (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _result(data, "matmul", (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0  # subgradient 0 at exactly 0

    def bwd(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), "relu", (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), "reshape", (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    def bwd(g):
        return (np.full_like(x.data, float(g)),)

    return _result(np.asarray(x.data.sum()), "sum", (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)

    return _result(np.asarray(x.data.mean()), "mean", (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return _result(x.data.mean(axis=(2, 3)), "global_avg_pool", (x,), bwd)


def softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax expects (N, K>=2), got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _result(p, "softmax", (logits,), bwd)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW x FCkhkw, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # im2col: cols[n, c, i, j, y, x] = xp[n, c, i + stride*y, j + stride*x]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    wmat = kernel.data.reshape(f, c * kh * kw)
    out = np.einsum("fk,nkl->nfl", wmat, cols2).reshape(n, f, ho, wo)

    def bwd(g):
        g2 = g.reshape(n, f, ho * wo)
        gw = np.einsum("nfl,nkl->fk", g2, cols2).reshape(kernel.shape)
        gcols = np.einsum("fk,nfl->nkl", wmat, g2).reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                    :, :, i, j
                ]
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gw

    return _result(out, "conv2d", (x, kernel), bwd)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics for one batch-norm layer (not trainable)."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(num_features)
        self.running_var = np.zeros(num_features)
        self.initialized = False


def batch_norm_2d(
    x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str
) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"batch_norm_2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    eps = state.eps

    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ContractError("batch norm in train mode needs N*H*W >= 2 per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
        state.initialized = True

        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
        out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gamma.data[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
            return dx, dgamma, dbeta

        return _result(out, "batch_norm_2d", (x, gamma, beta), bwd)

    if mode == "eval":
        if not state.initialized:
            raise StateError("batch norm eval mode before any train-mode call")
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dx = g * (gamma.data * inv_std)[None, :, None, None]
            return dx, dgamma, dbeta

        return _result(out, "batch_norm_2d", (x, gamma, beta), bwd)

    raise ContractError(f"unknown batch norm mode {mode!r}")


# ---------------------------------------------------------------------------
# gradient checking


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3):
    """Max relative error between autodiff and central finite differences.

    loss_fn evaluates the scalar loss at the current parameter values and
    must be deterministic. Relative error uses max(|analytic|, |numeric|, 1e-8)
    as the denominator.
    """
    if h <= 0:
        raise ContractError(f"step h must be positive, got {h}")
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    max_err = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                f_plus = loss_fn().item()
                flat[idx] = orig - h
                f_minus = loss_fn().item()
                flat[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                ana = a.reshape(-1)[idx]
                denom = max(abs(ana), abs(numeric), 1e-8)
                max_err = max(max_err, abs(ana - numeric) / denom)
    return max_err
