"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array; operations executed while a ``GradTape``
is active are recorded in execution order, and ``backward`` replays the
recorded rules in reverse to accumulate gradients on every participating
tensor. Production code runs in float32; verification code passes float64
arrays through the same operations unchanged.

``finite_diff_grad`` is the independent numeric oracle used to verify every
backward rule.
"""

from __future__ import annotations

import numbers
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class Tensor:
    """Shape-carrying numeric array that can participate in a gradient tape.

    Attributes:
        data: the underlying numpy array (float32 or float64).
        requires_grad: True for trainable leaves and for outputs recorded
            on an active tape.
        grad: accumulated gradient, same shape as ``data``; None until a
            backward pass reaches this tensor (None is read as zero).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic operators delegate to the module-level ops below so that
    # every code path records through the same tape machinery.
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

    def __getitem__(self, key):
        return tslice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def swapaxes(self, axis1: int, axis2: int):
        return swapaxes(self, axis1, axis2)


class _Node:
    """One recorded operation: the output tensor and its backward rule."""

    __slots__ = ("out", "rule")

    def __init__(self, out: Tensor, rule: Callable[[np.ndarray], None]):
        self.out = out
        self.rule = rule


class GradTape:
    """Ordered record of executed operations.

    Nodes are appended in execution order, which is automatically a
    topological order of the graph; replaying their backward rules in
    reverse accumulates gradients additively.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.nodes)


class no_grad:
    """Context that suspends recording even if an outer tape is active."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()


_TAPE_STACK: list = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcast to produce it."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _record(out: Tensor, inputs: Sequence[Tensor], rule) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, rule))
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, numbers.Number):
        a = _as_tensor(a)
        out = Tensor(a.data + b)

        def rule(g):
            _accum(a, g)

        return _record(out, (a,), rule)
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def rule(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), rule)


def sub(a, b) -> Tensor:
    if isinstance(b, numbers.Number):
        return add(a, -b)
    if isinstance(a, numbers.Number):
        return add(mul(b, -1.0), a)
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def rule(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), rule)


def mul(a, b) -> Tensor:
    if isinstance(b, numbers.Number):
        a = _as_tensor(a)
        out = Tensor(a.data * b)

        def rule(g):
            _accum(a, g * b)

        return _record(out, (a,), rule)
    if isinstance(a, numbers.Number):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def rule(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), rule)


def tslice(a, key) -> Tensor:
    """Basic slicing with gradient scatter back into the source."""
    a = _as_tensor(a)
    out = Tensor(a.data[key])

    def rule(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accum(a, full)

    return _record(out, (a,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accum(t, piece)

    return _record(out, tensors, rule)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def rule(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), rule)


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.swapaxes(a.data, axis1, axis2))

    def rule(g):
        _accum(a, np.swapaxes(g, axis1, axis2))

    return _record(out, (a,), rule)


def tsum(a) -> Tensor:
    """Sum of all elements, returned as a scalar tensor."""
    a = _as_tensor(a)
    out = Tensor(a.data.sum())

    def rule(g):
        _accum(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _record(out, (a,), rule)


def tmean(a) -> Tensor:
    """Mean of all elements, returned as a scalar tensor."""
    a = _as_tensor(a)
    n = a.data.size
    out = Tensor(a.data.mean())

    def rule(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype))

    return _record(out, (a,), rule)


def relu(a) -> Tensor:
    """Elementwise max(0, x); gradient passes only where x > 0."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))

    def rule(g):
        _accum(a, g * (a.data > 0))

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# Linear algebra and network ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the trailing two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul requires >=2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}"
        )
    out = Tensor(a.data @ b.data)

    def rule(g):
        if a.requires_grad:
            da = g @ b.data.swapaxes(-1, -2)
            if da.shape != a.data.shape:
                da = _unbroadcast(da, a.data.shape)
            _accum(a, da)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # batched activations against a shared weight: one flat GEMM
                # instead of a stacked product plus a reduction
                k_dim, n_dim = b.data.shape
                db = a.data.reshape(-1, k_dim).T @ g.reshape(-1, n_dim)
            else:
                db = a.data.swapaxes(-1, -2) @ g
                if db.shape != b.data.shape:
                    db = _unbroadcast(db, b.data.shape)
            _accum(b, db)

    return _record(out, (a, b), rule)


def conv1d(x, kernel, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution along the second-to-last axis.

    Args:
        x: input of shape [..., L, C_in].
        kernel: weights of shape [C_out, C_in, K].
        bias: per-output-channel bias of shape [C_out].
        stride: step between windows, >= 1.
        padding: zeros added at both ends of the length axis.

    Returns:
        Tensor of shape [..., L_out, C_out] with
        L_out = floor((L + 2*padding - K) / stride) + 1.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if stride < 1:
        raise ValueError(f"conv1d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv1d padding must be >= 0, got {padding}")
    if x.ndim < 2 or kernel.ndim != 3:
        raise ShapeMismatchError(
            f"conv1d expects input [..., L, C_in] and kernel [C_out, C_in, K], "
            f"got {x.shape} and {kernel.shape}"
        )
    L, c_in = x.shape[-2], x.shape[-1]
    c_out, kc_in, k = kernel.shape
    if kc_in != c_in:
        raise ShapeMismatchError(
            f"conv1d channel mismatch: input has {c_in} channels, "
            f"kernel expects {kc_in}"
        )
    if bias.shape != (c_out,):
        raise ShapeMismatchError(
            f"conv1d bias shape {bias.shape} does not match C_out={c_out}"
        )
    if L + 2 * padding < k:
        raise ShapeMismatchError(
            f"conv1d kernel width {k} exceeds padded input length "
            f"{L + 2 * padding} (input {x.shape})"
        )

    if padding > 0:
        pad_widths = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (0, 0)]
        padded = np.pad(x.data, pad_widths)
    else:
        padded = x.data
    windows = sliding_window_view(padded, k, axis=-2)[..., ::stride, :, :]
    l_out = windows.shape[-3]
    # flatten each window to one row so the contraction is a plain matmul
    win_flat = np.ascontiguousarray(windows).reshape(
        windows.shape[:-2] + (c_in * k,)
    )
    kernel_flat = kernel.data.reshape(c_out, c_in * k)
    out = Tensor(win_flat @ kernel_flat.T + bias.data)

    def rule(g):
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, c_out).sum(axis=0))
        if kernel.requires_grad:
            gflat = g.reshape(-1, c_out)
            dk = gflat.T @ win_flat.reshape(-1, c_in * k)
            _accum(kernel, dk.reshape(c_out, c_in, k))
        if x.requires_grad:
            dwin = (g @ kernel_flat).reshape(g.shape[:-1] + (c_in, k))
            dpad = np.zeros_like(padded)
            if stride == k:
                # non-overlapping windows tile the input exactly
                covered = dpad[..., : l_out * k, :].reshape(
                    dpad.shape[:-2] + (l_out, k, c_in)
                )
                covered += dwin.swapaxes(-1, -2)
            else:
                positions = stride * np.arange(l_out)
                for j in range(k):
                    dpad[..., positions + j, :] += dwin[..., :, :, j]
            if padding > 0:
                dpad = dpad[..., padding : padding + L, :]
            _accum(x, dpad)

    return _record(out, (x, kernel, bias), rule)


def avgpool1d_replicate(x, window: int) -> Tensor:
    """Moving average with replicate padding; output length equals input.

    The window must be odd so each output sample aligns with an input
    sample; edge values are repeated (window - 1) / 2 times on each side.
    """
    x = _as_tensor(x)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"avgpool window must be odd and >= 1, got {window}")
    if x.ndim < 2:
        raise ShapeMismatchError(f"avgpool expects [..., L, C], got {x.shape}")
    L = x.shape[-2]
    if window > 2 * L - 1:
        raise ValueError(
            f"avgpool window {window} too wide for input length {L}"
        )
    if window == 1:
        out = Tensor(x.data.copy())

        def rule_identity(g):
            _accum(x, g)

        return _record(out, (x,), rule_identity)

    p = (window - 1) // 2
    first = np.repeat(x.data[..., :1, :], p, axis=-2)
    last = np.repeat(x.data[..., -1:, :], p, axis=-2)
    padded = np.concatenate([first, x.data, last], axis=-2)
    windows = sliding_window_view(padded, window, axis=-2)
    out = Tensor(windows.mean(axis=-1))

    def rule(g):
        dpad = np.zeros_like(padded)
        gw = g / window
        for j in range(window):
            dpad[..., j : j + L, :] += gw
        dx = dpad[..., p : p + L, :].copy()
        dx[..., 0, :] += dpad[..., :p, :].sum(axis=-2)
        dx[..., -1, :] += dpad[..., p + L :, :].sum(axis=-2)
        _accum(x, dx)

    return _record(out, (x,), rule)


def softmax_lastdim(x) -> Tensor:
    """Row-normalized exponentials over the last axis, max-subtracted."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def rule(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accum(x, y * (g - inner))

    return _record(out, (x,), rule)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance,
    then apply the affine transform gamma * x_hat + beta."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not "
            f"match trailing dimension {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gamma.data + beta.data)

    def rule(g):
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat.mean(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (dxhat - term - xhat * term2) * inv_std)

    return _record(out, (x, gamma, beta), rule)


# ---------------------------------------------------------------------------
# Backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(tensor) on every tensor reachable from loss.

    Tensors the loss does not depend on keep ``grad is None``, which
    downstream consumers read as zero.
    """
    if loss.data.size != 1:
        raise ValueError(
            f"backward requires a scalar loss, got shape {loss.shape}"
        )
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node.out.grad is not None:
            node.rule(node.out.grad)


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar-valued function.

    Evaluates f elementwise at x +/- h in 64-bit precision; f must be
    deterministic. Independent of the tape machinery by construction.
    """
    base = x.data.astype(np.float64).copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(Tensor(base.copy(), dtype=np.float64)).item()
            flat[i] = orig - h
            f_minus = f(Tensor(base.copy(), dtype=np.float64)).item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
