"""Minimal deterministic tensor engine with reverse-mode differentiation.

Values are dense row-major float64 numpy arrays.  Differentiation uses an
explicit tape: operations executed while a :class:`Tape` is active append a
record (output id, inputs, vector-Jacobian product), and :func:`backward`
replays the records in reverse.  Creation order is execution order, so the
tape is topologically sorted by construction and the reverse sweep visits
each node exactly once.

Outside a tape every operation is plain numpy compute with no bookkeeping,
which is what inference paths use.

:func:`finite_diff_check` is the independent oracle for the whole engine:
central differences against the tape's gradients, coordinate by coordinate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .rng import Rng

_NODE_COUNTER = itertools.count()


class Tensor:
    """Dense float64 array with optional gradient buffer.

    ``requires_grad`` marks leaf tensors (parameters); gradients are
    deposited into ``grad`` by :func:`backward`, additively.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_NODE_COUNTER)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __deepcopy__(self, memo):
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        if self.grad is not None:
            t.grad = self.grad.copy()
        memo[id(self)] = t
        return t

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(arr: np.ndarray) -> Tensor:
    """Internal constructor that trusts dtype/layout of `arr`."""
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    t.requires_grad = False
    t.node_id = next(_NODE_COUNTER)
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_ACTIVE: "Tape | None" = None


class Tape:
    """Ordered record of primitive operations for one backward sweep.

    Use as a context manager around the forward computation::

        tape = Tape()
        with tape:
            loss = mse(conv2d(x, k), target)
        backward(tape, loss)

    A tape is confined to a single evaluation context; tapes do not nest.
    """

    __slots__ = ("_records", "_connected", "_tracked")

    def __init__(self):
        self._records = []        # (out_id, inputs, needs, vjp)
        self._connected = set()   # ids of tensors produced on this tape
        self._tracked = {}        # id -> leaf tensor with requires_grad

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def __len__(self) -> int:
        return len(self._records)


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _ACTIVE
    if tape is None:
        return out
    needs = []
    live = False
    for t in inputs:
        need = t.requires_grad or (t.node_id in tape._connected)
        needs.append(need)
        live = live or need
        if t.requires_grad:
            tape._tracked[t.node_id] = t
    if not live:
        return out
    tape._connected.add(out.node_id)
    tape._records.append((out.node_id, tuple(inputs), tuple(needs), vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of every tracked tensor with d(loss)/d(tensor).

    Accumulation is additive: over repeated uses of a node within the tape,
    and into any pre-existing ``grad`` buffers across calls.  Tracked
    tensors the loss does not depend on receive a zero gradient.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ContractError("loss must be scalar")
    grads = {loss.node_id: np.ones_like(loss.data)}
    for out_id, inputs, needs, vjp in reversed(tape._records):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for t, need, gi in zip(inputs, needs, vjp(g, needs)):
            if not need or gi is None:
                continue
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
    for nid, t in tape._tracked.items():
        g = grads.get(nid)
        if g is None:
            g = np.zeros_like(t.data)
        else:
            g = g.reshape(t.data.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# Elementwise and reduction primitives
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data + b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(g, b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data - b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(-g, b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data * b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g * b.data, a.data.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data / b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g / b.data, a.data.shape) if needs[0] else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def square(x: Tensor) -> Tensor:
    out = _wrap(x.data * x.data)

    def vjp(g, needs):
        return (2.0 * x.data * g,)

    return _record(out, (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = _wrap(y)

    def vjp(g, needs):
        return (g * 0.5 / y,)

    return _record(out, (x,), vjp)


def absolute(x: Tensor) -> Tensor:
    out = _wrap(np.abs(x.data))

    def vjp(g, needs):
        return (g * np.sign(x.data),)

    return _record(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = _wrap(np.maximum(x.data, 0.0))

    def vjp(g, needs):
        return (g * (x.data > 0.0),)

    return _record(out, (x,), vjp)


def clamp01(x: Tensor) -> Tensor:
    """Clamp to [0, 1]; gradient passes where the input is inside the range."""
    out = _wrap(np.clip(x.data, 0.0, 1.0))

    def vjp(g, needs):
        return (g * ((x.data >= 0.0) & (x.data <= 1.0)),)

    return _record(out, (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    out = _wrap(np.asarray(np.mean(x.data)))
    n = x.data.size

    def vjp(g, needs):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    out = _wrap(np.asarray(np.sum(x.data)))

    def vjp(g, needs):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def sum_last(x: Tensor) -> Tensor:
    """Sum over the final axis, keeping it as size 1."""
    out = _wrap(np.sum(x.data, axis=-1, keepdims=True))

    def vjp(g, needs):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    out = _wrap(x.data.reshape(shape))

    def vjp(g, needs):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), vjp)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("transpose2d expects a 2-D tensor")
    out = _wrap(x.data.T)

    def vjp(g, needs):
        return (g.T,)

    return _record(out, (x,), vjp)


# --------------------------------------------------------------------------
# Linear algebra and convolution
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = _wrap(a.data @ b.data)

    def vjp(g, needs):
        return (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """[C, H, W] -> [C*k*k, H*W] patch matrix under same-padding."""
    c, h, w = x.shape
    pad = k // 2
    if pad:
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, k * k, h * w), dtype=np.float64)
    idx = 0
    for di in range(k):
        for dj in range(k):
            cols[:, idx, :] = xp[:, di:di + h, dj:dj + w].reshape(c, h * w)
            idx += 1
    return cols.reshape(c * k * k, h * w)


def _col2im(colg: np.ndarray, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to [C, H, W]."""
    pad = k // 2
    xg = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cols = colg.reshape(c, k * k, h * w)
    idx = 0
    for di in range(k):
        for dj in range(k):
            xg[:, di:di + h, dj:dj + w] += cols[:, idx, :].reshape(c, h, w)
            idx += 1
    if pad:
        return xg[:, pad:pad + h, pad:pad + w].copy()
    return xg


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-padded stride-1 convolution of [C_in,H,W] with [C_out,C_in,k,k]."""
    if x.data.ndim != 3:
        raise DimensionError("conv2d input must be [C, H, W]")
    if kernel.data.ndim != 4:
        raise DimensionError("conv2d kernel must be [C_out, C_in, k, k]")
    c_out, c_in, kh, kw = kernel.data.shape
    if kh != kw:
        raise DimensionError("conv2d kernel must be square")
    if kh % 2 == 0:
        raise DimensionError("conv2d kernel size must be odd")
    if c_in != x.data.shape[0]:
        raise DimensionError(
            f"kernel expects {c_in} input channels, got {x.data.shape[0]}"
        )
    c, h, w = x.data.shape
    cols = _im2col(x.data, kh)
    kmat = kernel.data.reshape(c_out, c_in * kh * kw)
    out = _wrap((kmat @ cols).reshape(c_out, h, w))

    def vjp(g, needs):
        gmat = g.reshape(c_out, h * w)
        gx = gk = None
        if needs[0]:
            gx = _col2im(kmat.T @ gmat, c, h, w, kh)
        if needs[1]:
            gk = (gmat @ cols.T).reshape(kernel.data.shape)
        return (gx, gk)

    return _record(out, (x, kernel), vjp)


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    For a 1-D input this is the probability vector of the logits; for
    higher ranks each row of the final axis is normalized independently.
    """
    if not np.all(np.isfinite(v.data)):
        raise ContractError("softmax input must be finite")
    shifted = v.data - np.max(v.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)
    out = _wrap(y)

    def vjp(g, needs):
        inner = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _record(out, (v,), vjp)


def global_avg_pool(f: Tensor) -> Tensor:
    """Per-channel spatial mean: [C, H, W] -> [C]."""
    if f.data.ndim != 3:
        raise DimensionError("global_avg_pool input must be [C, H, W]")
    c, h, w = f.data.shape
    out = _wrap(f.data.reshape(c, h * w).mean(axis=1))

    def vjp(g, needs):
        return (np.broadcast_to(g[:, None, None] / (h * w), f.data.shape).copy(),)

    return _record(out, (f,), vjp)


# --------------------------------------------------------------------------
# Channel concat / split
# --------------------------------------------------------------------------

def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Stack [C_p, H, W] tensors along the channel axis."""
    if not parts:
        raise ContractError("concat_channels needs at least one part")
    hw = parts[0].data.shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.data.shape[1:] != hw:
            raise DimensionError("concat_channels parts must share H and W")
    out = _wrap(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]

    def vjp(g, needs):
        grads = []
        start = 0
        for p, cs in zip(parts, sizes):
            grads.append(g[start:start + cs] if needs[len(grads)] else None)
            start += cs
        return tuple(grads)

    return _record(out, tuple(parts), vjp)


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    out = _wrap(t.data[start:stop])

    def vjp(g, needs):
        full = np.zeros_like(t.data)
        full[start:stop] = g
        return (full,)

    return _record(out, (t,), vjp)


def split_channels(t: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of concat_channels for the given channel sizes."""
    if sum(sizes) != t.data.shape[0]:
        raise DimensionError(
            f"split sizes {list(sizes)} do not sum to {t.data.shape[0]} channels"
        )
    outs = []
    start = 0
    for cs in sizes:
        outs.append(slice_channels(t, start, start + cs))
        start += cs
    return outs


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of [C, H, W]."""
    out = _wrap(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2))
    c, h, w = x.data.shape

    def vjp(g, needs):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _record(out, (x,), vjp)


def downsample2x_mean(x: Tensor) -> Tensor:
    """2x spatial downsampling by averaging each 2x2 block."""
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError("downsample2x_mean needs even spatial dims")
    out = _wrap(x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)))

    def vjp(g, needs):
        up = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
        return (up / 4.0,)

    return _record(out, (x,), vjp)


# --------------------------------------------------------------------------
# Composite operations
# --------------------------------------------------------------------------

def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared elementwise difference (scalar)."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse shapes differ: {a.data.shape} vs {b.data.shape}")
    return mean_all(square(sub(a, b)))


@dataclass
class MlpParams:
    """Parameters of a 2-layer MLP: out = W2 . relu(W1 . x + b1) + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w1", self.w1),
            (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2),
            (f"{prefix}.b2", self.b2),
        ]


def init_mlp(rng: Rng, d_in: int, d_hidden: int, d_out: int) -> MlpParams:
    """Fresh MLP parameters: weights uniform +-sqrt(1/fan_in), biases zero."""
    b_in = (1.0 / d_in) ** 0.5
    b_hid = (1.0 / d_hidden) ** 0.5
    return MlpParams(
        w1=Tensor(rng.fill_uniform((d_hidden, d_in), -b_in, b_in), requires_grad=True),
        b1=Tensor(np.zeros(d_hidden), requires_grad=True),
        w2=Tensor(rng.fill_uniform((d_out, d_hidden), -b_hid, b_hid), requires_grad=True),
        b2=Tensor(np.zeros(d_out), requires_grad=True),
    )


def mlp2(x: Tensor, params: MlpParams) -> Tensor:
    """Two-layer MLP with ReLU between the layers.

    A 1-D input [d_in] maps to [d_out]; a 2-D input [B, d_in] is treated as
    a batch of rows and maps to [B, d_out].
    """
    w1, b1, w2, b2 = params.w1, params.b1, params.w2, params.b2
    if x.data.ndim == 1:
        if x.data.shape[0] != w1.data.shape[1]:
            raise DimensionError(
                f"mlp2 expects input width {w1.data.shape[1]}, got {x.data.shape[0]}"
            )
        col = reshape(x, (x.data.shape[0], 1))
        h = relu(add(matmul(w1, col), reshape(b1, (b1.data.shape[0], 1))))
        out = add(matmul(w2, h), reshape(b2, (b2.data.shape[0], 1)))
        return reshape(out, (w2.data.shape[0],))
    if x.data.ndim == 2:
        if x.data.shape[1] != w1.data.shape[1]:
            raise DimensionError(
                f"mlp2 expects input width {w1.data.shape[1]}, got {x.data.shape[1]}"
            )
        h = relu(add(matmul(x, transpose2d(w1)), reshape(b1, (1, b1.data.shape[0]))))
        return add(matmul(h, transpose2d(w2)), reshape(b2, (1, b2.data.shape[0])))
    raise DimensionError("mlp2 input must be 1-D or 2-D")


# --------------------------------------------------------------------------
# Gradient oracle
# --------------------------------------------------------------------------

def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    sample: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must deterministically build a scalar loss from the given
    parameter tensors (and must not open a tape of its own).  The analytic
    gradient is computed once via :func:`backward`; each checked coordinate
    is then perturbed by +-eps in place and the central difference
    (f(p+eps) - f(p-eps)) / (2 eps) compared against it.  Relative error
    uses max(|analytic|, |numeric|, 1e-8) in the denominator.

    ``sample`` limits the check to that many coordinates, chosen by a
    deterministic shuffle of all coordinates with ``rng``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError("eps must lie in [1e-7, 1e-3]")
    for p in params:
        p.grad = None
    tape = Tape()
    with tape:
        loss = f(params)
    backward(tape, loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if sample is not None and sample < len(coords):
        r = rng if rng is not None else Rng(0)
        order = list(range(len(coords)))
        r.shuffle(order)
        coords = [coords[k] for k in order[:sample]]
    worst = 0.0
    for pi, j in coords:
        p = params[pi]
        orig = p.data.flat[j]
        p.data.flat[j] = orig + eps
        fp = f(params).item()
        p.data.flat[j] = orig - eps
        fm = f(params).item()
        p.data.flat[j] = orig
        numeric = (fp - fm) / (2.0 * eps)
        exact = float(analytic[pi].flat[j])
        rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        if rel > worst:
            worst = rel
    return worst
