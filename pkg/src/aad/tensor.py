"""Minimal dense-array reverse-mode autodiff with a causal 1-D convolution.

A Tensor wraps a numpy array plus a lazily allocated gradient buffer and a
closure that routes incoming gradients to its parents. backward() walks the
tape in reverse topological order. Ops preserve the dtype of their inputs,
so the same graph code runs in float32 for training and float64 for
finite-difference oracles.

Elementwise binary ops accept tensors of identical shape or python
scalars; there is deliberately no general broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


class Tensor:
    """N-dimensional value participating in reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- elementwise arithmetic --

    def __add__(self, other):
        return _binary(self, other, "add",
                       lambda a, b: a + b,
                       lambda g, a, b: (g, g))

    def __sub__(self, other):
        return _binary(self, other, "sub",
                       lambda a, b: a - b,
                       lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, "mul",
                       lambda a, b: a * b,
                       lambda g, a, b: (g * b, g * a))

    def __neg__(self):
        return self * -1.0

    __radd__ = __add__
    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    # -- activations and shape ops --

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0)
        return _unary(self, "relu", out_data, lambda g: g * (self.data > 0))

    def sigmoid(self) -> "Tensor":
        s = 1.0 / (1.0 + np.exp(-self.data))
        return _unary(self, "sigmoid", s, lambda g: g * s * (1.0 - s))

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return _unary(self, "tanh", t, lambda g: g * (1.0 - t * t))

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        return _unary(self, "exp", e, lambda g: g * e)

    def sum(self) -> "Tensor":
        return _unary(self, "sum", np.asarray(self.data.sum()),
                      lambda g: np.full_like(self.data, g))

    def mean(self) -> "Tensor":
        n = self.data.size
        return _unary(self, "mean", np.asarray(self.data.mean()),
                      lambda g: np.full_like(self.data, g / n))

    def reshape(self, shape) -> "Tensor":
        out_data = self.data.reshape(shape)
        return _unary(self, "reshape", out_data,
                      lambda g: g.reshape(self.data.shape))

    def backward(self) -> None:
        backward(self)


def _unary(a: Tensor, op: str, out_data: np.ndarray, grad_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=a.requires_grad, op=op, _parents=(a,))
    if a.requires_grad:
        def _bw(g):
            a.accumulate_grad(grad_fn(g))
        out._backward = _bw
    return out


def _binary(a: Tensor, b, op: str, fwd, bwd) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not agree")
    out = Tensor(fwd(a.data, b.data),
                 requires_grad=a.requires_grad or b.requires_grad,
                 op=op, _parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            ga, gb = bwd(g, a.data, b.data)
            if a.requires_grad:
                a.accumulate_grad(_reduce_to(ga, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_reduce_to(gb, b.shape))
        out._backward = _bw
    return out


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Collapse a gradient back to a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad,
                 op="matmul", _parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)
        out._backward = _bw
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine layer y = x @ w + b for x (batch, in), w (in, out), b (out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: shapes {x.shape} and {w.shape} do not agree")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    out = Tensor(x.data @ w.data + b.data,
                 requires_grad=x.requires_grad or w.requires_grad or b.requires_grad,
                 op="dense", _parents=(x, w, b))
    if out.requires_grad:
        def _bw(g):
            if x.requires_grad:
                x.accumulate_grad(g @ w.data.T)
            if w.requires_grad:
                w.accumulate_grad(x.data.T @ g)
            if b.requires_grad:
                b.accumulate_grad(g.sum(axis=0))
        out._backward = _bw
    return out


def _shifted(x: np.ndarray, s: int) -> np.ndarray:
    """Shift along the last axis: out[..., t] = x[..., t - s], zero-filled."""
    out = np.zeros_like(x)
    t = x.shape[-1]
    if s >= t or s <= -t:
        return out
    if s >= 0:
        out[..., s:] = x[..., :t - s]
    else:
        out[..., :t + s] = x[..., -s:]
    return out


def conv1d_causal(x: Tensor, w: Tensor, dilation: int = 1,
                  bias: Tensor | None = None, causal: bool = True) -> Tensor:
    """Dilated 1-D convolution, length-preserving.

    x is (batch, in_ch, T), w is (out_ch, in_ch, k). In causal mode the
    input is left zero-padded by (k-1)*dilation, so
    y(t) = sum_j w(j) * x(t - j*dilation) and no output reads the future.
    With causal=False the taps are centered (odd k), for decoders that
    reconstruct complete windows.
    """
    if dilation < 1:
        raise ContractError("dilation must be >= 1")
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: shapes {x.shape} and {w.shape} do not agree")
    out_ch, _, k = w.shape
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({out_ch},)")
    anchor = 0 if causal else (k - 1) // 2
    offsets = [(j - anchor) * dilation for j in range(k)]
    xd, wd = x.data, w.data

    y = np.zeros((x.shape[0], out_ch, x.shape[2]), dtype=xd.dtype)
    for j, off in enumerate(offsets):
        y += np.einsum("oc,bct->bot", wd[:, :, j], _shifted(xd, off))
    if bias is not None:
        y += bias.data[None, :, None]

    parents = (x, w) if bias is None else (x, w, bias)
    req = any(p.requires_grad for p in parents)
    out = Tensor(y, requires_grad=req, op="conv1d", _parents=parents)
    if req:
        def _bw(g):
            if x.requires_grad:
                gx = np.zeros_like(xd)
                for j, off in enumerate(offsets):
                    gx += np.einsum("oc,bot->bct", wd[:, :, j], _shifted(g, -off))
                x.accumulate_grad(gx)
            if w.requires_grad:
                gw = np.zeros_like(wd)
                for j, off in enumerate(offsets):
                    gw[:, :, j] = np.einsum("bot,bct->oc", g, _shifted(xd, off))
                w.accumulate_grad(gw)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2)))
        out._backward = _bw
    return out


def downsample(x: Tensor, step: int) -> Tensor:
    """Keep every step-th time step of (batch, ch, T); stride-2 analog."""
    if step < 1:
        raise ContractError("step must be >= 1")
    out_data = np.ascontiguousarray(x.data[:, :, ::step])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::step] = g
        return gx
    return _unary(x, "downsample", out_data, grad_fn)


def upsample(x: Tensor, factor: int) -> Tensor:
    """Repeat each time step of (batch, ch, T) ``factor`` times."""
    if factor < 1:
        raise ContractError("factor must be >= 1")
    out_data = np.repeat(x.data, factor, axis=2)

    def grad_fn(g):
        b, c, t = x.data.shape
        return g.reshape(b, c, t, factor).sum(axis=3)
    return _unary(x, "upsample", out_data, grad_fn)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Interior-node gradients are per-call scratch; leaf gradients
    accumulate across calls until the caller zeroes them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    # iterative postorder DFS; deep graphs would blow the recursion limit
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    while stack:
        node, visited = stack.pop()
        if visited:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, 1))
        for p in node._parents:
            if p._parents and id(p) not in seen:
                stack.append((p, 0))
    for node in topo:
        node.grad = None
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(p.data) for p in params]
    state.v = [np.zeros_like(p.data) for p in params]
    return state


def adam_step(params, state: AdamState) -> None:
    """One Adam update with bias correction; caller zeroes grads."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1 ** state.t)
        v_hat = state.v[i] / (1 - b2 ** state.t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
