"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Ops record themselves on the innermost active :class:`Tape`; with no tape
active they simply compute.  Every op accepts optional leading batch axes so
that several independent images (each with its own weights) can be pushed
through one call.
"""

from __future__ import annotations

import functools
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ContractError",
    "DimensionError",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "add",
    "apply_linear",
    "channel_norm",
    "conv1x1",
    "lincomb",
    "matvec",
    "reduce_sum",
    "relu",
    "reshape",
    "sigmoid",
    "sub",
    "sum_squares",
    "upsample_bilinear_2x",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An autodiff API was used outside its contract."""


class NonFiniteError(FloatingPointError):
    """A tensor would contain NaN or Inf."""


class Tensor:
    """Immutable float64 array.

    ``requires_grad`` marks a tensor as eligible to be a differentiable
    leaf; asking the tape for the gradient of a tensor without it yields
    zeros.
    """

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self._init(arr, requires_grad)

    def _init(self, arr: np.ndarray, requires_grad: bool) -> None:
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite entries in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        t._init(arr, False)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Use as a context manager; the tape is single-owner and should be thrown
    away after :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.remove(self)

    def record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        self.nodes.append(_Node(out, inputs, vjp))

    def backward(self, loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(loss)/d(leaf) for each leaf, zeros for untouched leaves."""
        if loss.shape != ():
            raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
        leaf_ids = {id(t) for t in leaves if t.requires_grad}
        produced = {id(n.out) for n in self.nodes}
        if id(loss) not in produced and id(loss) not in leaf_ids:
            raise ContractError("loss was not produced on this tape")

        # forward sweep: which values depend on a requested leaf
        live = set(leaf_ids)
        for node in self.nodes:
            if any(id(t) in live for t in node.inputs if isinstance(t, Tensor)):
                live.add(id(node.out))

        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None or id(node.out) not in live:
                continue
            needs = tuple(isinstance(t, Tensor) and id(t) in live for t in node.inputs)
            if not any(needs):
                continue
            for t, need, gi in zip(node.inputs, needs, node.vjp(g, needs)):
                if not need:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        out = []
        for t in leaves:
            g = grads.get(id(t)) if t.requires_grad else None
            out.append(np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape))
        return out


def _emit(arr: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    out = Tensor._wrap(arr)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pixelwise channel mixing: ``out[..., k, h, w] = sum_c w[..., k, c] x[..., c, h, w]``."""
    _check_tensor(x, "x"), _check_tensor(w, "w")
    if x.ndim < 3 or w.ndim < 2:
        raise DimensionError(f"conv1x1 expects x[...,C,H,W] and w[...,K,C], got {x.shape} and {w.shape}")
    C, H, W = x.shape[-3:]
    if w.shape[-1] != C:
        raise DimensionError(f"weights expect {w.shape[-1]} input channels, input has {C}")
    xf = x.data.reshape(x.shape[:-2] + (H * W,))
    try:
        of = np.matmul(w.data, xf)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    out_shape = of.shape[:-1] + (H, W)

    def vjp(g, needs):
        gf = g.reshape(g.shape[:-2] + (H * W,))
        gx = gw = None
        if needs[0]:
            gx = _unbroadcast(np.matmul(np.swapaxes(w.data, -1, -2), gf), xf.shape).reshape(x.shape)
        if needs[1]:
            gw = _unbroadcast(np.matmul(gf, np.swapaxes(xf, -1, -2)), w.shape)
        return gx, gw

    return _emit(of.reshape(out_shape), (x, w), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g, needs: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(s, (x,), lambda g, needs: (g * s * (1.0 - s),))


@functools.lru_cache(maxsize=32)
def _upsample_matrix(n: int) -> np.ndarray:
    """``2n x n`` 1-D stencil: even outputs 3/4 self + 1/4 left, odd 3/4 self + 1/4 right, clamped."""
    U = np.zeros((2 * n, n))
    for j in range(n):
        U[2 * j, j] += 0.75
        U[2 * j, max(j - 1, 0)] += 0.25
        U[2 * j + 1, j] += 0.75
        U[2 * j + 1, min(j + 1, n - 1)] += 0.25
    U.flags.writeable = False
    return U


def upsample_bilinear_2x(x: Tensor) -> Tensor:
    """Fixed 2x bilinear upsampling of the last two axes (half-pixel centres, edge clamp)."""
    if x.ndim < 2:
        raise DimensionError(f"upsampling needs at least 2 axes, got {x.shape}")
    Uh = _upsample_matrix(x.shape[-2])
    Uw = _upsample_matrix(x.shape[-1])
    out = np.matmul(Uh, x.data @ Uw.T)

    def vjp(g, needs):
        return (np.matmul(Uh.T, g) @ Uw,)

    return _emit(out, (x,), vjp)


def channel_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each channel over its spatial extent, then apply a per-channel affine map."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim < 3:
        raise DimensionError(f"channel_norm expects x[...,C,H,W], got {x.shape}")
    C, H, W = x.shape[-3:]
    if scale.shape[-1:] != (C,) or shift.shape[-1:] != (C,):
        raise DimensionError(f"scale/shift must end in {C} channels, got {scale.shape}, {shift.shape}")
    n = H * W
    xs = x.data.reshape(x.shape[:-2] + (n,))
    xc = xs - xs.mean(axis=-1, keepdims=True)
    var = np.einsum("...i,...i->...", xc, xc)[..., None] / n
    inv = 1.0 / np.sqrt(var + eps)
    s = scale.data[..., None]
    try:
        out = xc * (inv * s)
        out += shift.data[..., None]
    except ValueError as e:
        raise DimensionError(str(e)) from None

    def vjp(g, needs):
        gx = gs = gb = None
        xh = xc * inv
        gf = g.reshape(xh.shape)
        if needs[0]:
            gxh = gf * s
            proj = np.einsum("...i,...i->...", gxh, xh)[..., None] / n
            gxh -= gxh.mean(axis=-1, keepdims=True)
            gxh -= xh * proj
            gxh *= inv
            gx = _unbroadcast(gxh, xs.shape).reshape(x.shape)
        if needs[1]:
            gs = _unbroadcast(np.einsum("...i,...i->...", gf, xh), scale.shape)
        if needs[2]:
            gb = _unbroadcast(gf.sum(axis=-1), shift.shape)
        return gx, gs, gb

    return _emit(out.reshape(out.shape[:-1] + (H, W)), (x, scale, shift), vjp)


def _coef(c, like: Tensor) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = c.data if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64)
    if arr.ndim > like.ndim or like.shape[: arr.ndim] != arr.shape:
        raise DimensionError(f"coefficient of shape {arr.shape} does not lead {like.shape}")
    return arr.reshape(arr.shape + (1,) * (like.ndim - arr.ndim)), tuple(range(arr.ndim, like.ndim))


def lincomb(a, x: Tensor, b, y: Tensor) -> Tensor:
    """``a*x + b*y``; coefficients may be floats, scalar tensors, or per-batch tensors."""
    if x.shape != y.shape:
        raise DimensionError(f"lincomb shapes differ: {x.shape} vs {y.shape}")
    ca, axes = _coef(a, x)
    cb, _ = _coef(b, y)
    out = ca * x.data + cb * y.data

    def vjp(g, needs):
        ga = (g * x.data).sum(axis=axes) if needs[0] else None
        gx = g * ca if needs[1] else None
        gb = (g * y.data).sum(axis=axes) if needs[2] else None
        gy = g * cb if needs[3] else None
        return ga, gx, gb, gy

    return _emit(out, (a, x, b, y), vjp)


def matvec(A: Tensor, x: Tensor) -> Tensor:
    """``A @ x`` for a 2-D ``A``; leading axes of ``x`` are treated as a batch."""
    if A.ndim != 2 or x.ndim < 1 or A.shape[1] != x.shape[-1]:
        raise DimensionError(f"matvec shapes incompatible: {A.shape} @ {x.shape}")
    m, n = A.shape
    out = x.data @ A.data.T

    def vjp(g, needs):
        gA = gx = None
        if needs[0]:
            gA = g.reshape(-1, m).T @ x.data.reshape(-1, n)
        if needs[1]:
            gx = g @ A.data
        return gA, gx

    return _emit(out, (A, x), vjp)


def add(x: Tensor, y: Tensor) -> Tensor:
    try:
        out = x.data + y.data
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return _emit(out, (x, y), lambda g, needs: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(x: Tensor, y: Tensor) -> Tensor:
    try:
        out = x.data - y.data
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return _emit(out, (x, y), lambda g, needs: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))
    return _emit(out, (x,), lambda g, needs: (g.reshape(x.shape),))


def reduce_sum(x: Tensor) -> Tensor:
    return _emit(np.asarray(x.data.sum()), (x,), lambda g, needs: (np.broadcast_to(g, x.shape).copy(),))


def sum_squares(x: Tensor) -> Tensor:
    """Squared Euclidean norm of all entries, as a scalar."""
    xd = x.data
    return _emit(np.asarray(np.vdot(xd, xd)), (x,), lambda g, needs: (2.0 * g * xd,))


def apply_linear(x: Tensor, forward: Callable[[np.ndarray], np.ndarray],
                 adjoint: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply a fixed linear map given as a forward/adjoint pair of array functions."""
    return _emit(forward(x.data), (x,), lambda g, needs: (adjoint(g),))
