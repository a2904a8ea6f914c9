"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap C-contiguous numpy arrays (float64 by default, float32 on
request). Every differentiable operation appends a node to a global tape;
``backward(loss)`` replays the tape once in reverse execution order and
accumulates gradients into ``Tensor.grad``. The tape is cleared after each
backward pass, so the intended usage is one recorded graph per training step.

Forward evaluation with frozen parameters is safe to run concurrently on
independent inputs only under ``no_grad()``; recording and backward are
single-threaded.
"""

from __future__ import annotations

import weakref
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputTooShortError, InternalError, UsageError

DEFAULT_DTYPE = np.float64

_grad_enabled = True
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf scanning of every op output (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class MemoryTracker:
    """High-water accounting of live tensor buffer bytes."""

    def __init__(self) -> None:
        self.current_bytes = 0
        self.peak_bytes = 0

    def allocate(self, nbytes: int) -> None:
        self.current_bytes += nbytes
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def release(self, nbytes: int) -> None:
        self.current_bytes -= nbytes

    def reset_peak(self) -> None:
        """Restart high-water tracking from the currently live bytes."""
        self.peak_bytes = self.current_bytes


_memory = MemoryTracker()


def memory_tracker() -> MemoryTracker:
    return _memory


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self) -> "no_grad":
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc) -> None:
        global _grad_enabled
        _grad_enabled = self._prev


class Tensor:
    """Dense n-dimensional real array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        _memory.allocate(self.data.nbytes)
        weakref.finalize(self, _memory.release, self.data.nbytes)

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array (detached from the graph)."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method sugar ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return permute(self, tuple(reversed(range(self.ndim))))

    def backward(self) -> None:
        backward(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Gradient tape
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple, vjp) -> None:
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_tape: list[_Node] = []


def tape_size() -> int:
    return len(_tape)


def clear_tape() -> None:
    _tape.clear()


def _make_out(arr: np.ndarray, inputs: tuple, vjp, op: str) -> Tensor:
    out = Tensor(arr)
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise InternalError(f"non-finite values produced by op '{op}'")
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape.append(_Node(out, inputs, vjp))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # copy: vjp results may alias each other (e.g. add returns grad twice)
        t.grad = np.array(g, dtype=t.dtype)
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor recorded on the tape.

    Tensors that were recorded but do not influence ``loss`` receive zero
    gradients. The tape is consumed and cleared.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not require grad; no graph was recorded")
    loss.grad = np.ones_like(loss.data)
    try:
        for node in reversed(_tape):
            if node.out.grad is None:
                continue
            grads = node.vjp(node.out.grad)
            for t, g in zip(node.inputs, grads):
                if t.requires_grad and g is not None:
                    _accumulate(t, g)
        for node in _tape:
            for t in node.inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
    finally:
        clear_tape()


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _make_out(x.data + y.data, (x, y), vjp, "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return _make_out(x.data - y.data, (x, y), vjp, "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return _make_out(x.data * y.data, (x, y), vjp, "mul")


def div(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        )

    return _make_out(x.data / y.data, (x, y), vjp, "div")


def neg(x: Tensor) -> Tensor:
    return _make_out(-x.data, (x,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _make_out(np.where(mask, x.data, 0), (x,), vjp, "relu")


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with per-channel slope; ``alpha`` broadcasts over the last axis."""
    pos = x.data > 0
    out = np.where(pos, x.data, alpha.data * x.data)

    def vjp(g):
        gx = g * np.where(pos, 1.0, alpha.data)
        ga = _unbroadcast(g * np.where(pos, 0.0, x.data), alpha.shape)
        return gx, ga

    return _make_out(out, (x, alpha), vjp, "prelu")


def log(x: Tensor) -> Tensor:
    def vjp(g):
        return (g / x.data,)

    return _make_out(np.log(x.data), (x,), vjp, "log")


def sqrt(x: Tensor) -> Tensor:
    root = np.sqrt(x.data)

    def vjp(g):
        return (g / (2.0 * root),)

    return _make_out(root, (x,), vjp, "sqrt")


def clamp_max(x: Tensor, limit: float) -> Tensor:
    """Elementwise min(x, limit); subgradient 0 at and above the limit."""
    below = x.data < limit

    def vjp(g):
        return (g * below,)

    return _make_out(np.minimum(x.data, limit), (x,), vjp, "clamp_max")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _make_out(s, (x,), vjp, "softmax")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _make_out(np.asarray(out), (x,), vjp, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.shape[a] for a in axis]))
    else:
        n = x.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if x.ndim < 2 or y.ndim < 2:
        raise ConfigurationError(
            f"matmul needs >=2-D operands, got {x.shape} @ {y.shape}"
        )

    def vjp(g):
        gx = _unbroadcast(g @ np.swapaxes(y.data, -1, -2), x.shape)
        gy = _unbroadcast(np.swapaxes(x.data, -1, -2) @ g, y.shape)
        return gx, gy

    try:
        out = x.data @ y.data
    except ValueError as exc:
        raise ConfigurationError(f"matmul shape mismatch: {x.shape} @ {y.shape}") from exc
    return _make_out(out, (x, y), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: x @ weight + bias."""
    return matmul(x, weight) + bias


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ConfigurationError(f"cannot reshape {x.shape} to {shape}") from exc
    return _make_out(out, (x,), vjp, "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ConfigurationError(f"invalid permutation {axes} for ndim {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _make_out(np.ascontiguousarray(x.data.transpose(axes)), (x,), vjp, "permute")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ConfigurationError("concat shape mismatch") from exc
    return _make_out(out, tensors, vjp, "concat")


def take(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing. The adjoint scatters into a zero array."""

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make_out(np.ascontiguousarray(x.data[idx]), (x,), vjp, "take")


# ---------------------------------------------------------------------------
# Windowing primitives (chunking and overlap-add are built on these)
# ---------------------------------------------------------------------------


def _gather_rows(arr: np.ndarray, size: int, step: int) -> np.ndarray:
    # [T, F] -> [N, size, F] of overlapping row windows
    windows = np.lib.stride_tricks.sliding_window_view(arr, size, axis=0)
    return np.ascontiguousarray(windows[::step].transpose(0, 2, 1))


def _scatter_rows(win: np.ndarray, step: int, out_len: int) -> np.ndarray:
    out = np.zeros((out_len,) + win.shape[2:], dtype=win.dtype)
    size = win.shape[1]
    for j in range(win.shape[0]):
        out[j * step : j * step + size] += win[j]
    return out


def unfold_rows(x: Tensor, size: int, step: int) -> Tensor:
    """Stack overlapping row windows of a [T, ...] tensor into [N, size, ...].

    Requires (T - size) to be a multiple of step so windows tile the input
    exactly; callers pad beforehand.
    """
    t_len = x.shape[0]
    if size < 1 or step < 1:
        raise ConfigurationError("unfold_rows needs positive size and step")
    if t_len < size or (t_len - size) % step != 0:
        raise ConfigurationError(
            f"unfold_rows: length {t_len} incompatible with size={size} step={step}"
        )

    def vjp(g):
        return (_scatter_rows(g, step, t_len),)

    return _make_out(_gather_rows(x.data, size, step), (x,), vjp, "unfold_rows")


def fold_rows(y: Tensor, step: int, out_len: int) -> Tensor:
    """Scatter-add [N, size, ...] windows back to [out_len, ...] rows.

    Exact adjoint of :func:`unfold_rows`; no coverage normalization here.
    """
    n, size = y.shape[0], y.shape[1]
    if out_len < size or (out_len - size) % step != 0 or (out_len - size) // step + 1 != n:
        raise ConfigurationError(
            f"fold_rows: {n} windows of {size} (step {step}) do not tile length {out_len}"
        )

    def vjp(g):
        return (_gather_rows(g, size, step),)

    return _make_out(_scatter_rows(y.data, step, out_len), (y,), vjp, "fold_rows")


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def _conv_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [C, T] -> [C, T', K] views of the receptive fields
    return np.lib.stride_tricks.sliding_window_view(x, k, axis=1)[:, ::stride, :]


def _conv1d_gather(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    # out[f, t] = sum_{c,k} w[f,c,k] * x[c, t*stride + k]
    f, cin, k = w.shape
    win = _conv_windows(x, k, stride)  # [Cin, T', K]
    tp = win.shape[1]
    col = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(cin * k, tp)
    return w.reshape(f, cin * k) @ col


def _conv1d_scatter(
    y: np.ndarray, w: np.ndarray, stride: int, out_len: Optional[int] = None
) -> np.ndarray:
    # out[c, t'*stride + k] += sum_f w[f,c,k] * y[f,t']
    f, cout, k = w.shape
    tp = y.shape[1]
    if out_len is None:
        out_len = (tp - 1) * stride + k
    contrib = np.einsum("fp,fck->ckp", y, w)  # [Cout, K, T']
    out = np.zeros((cout, out_len), dtype=y.dtype)
    for j in range(k):
        out[:, j : j + stride * tp : stride] += contrib[:, j, :]
    return out


def _conv1d_weight_grad(dy: np.ndarray, x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = _conv_windows(x, k, stride)  # [C, T', K]
    return np.einsum("fp,cpk->fck", dy, win)


def conv1d(x: Tensor, w: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Strided cross-correlation of [Cin, T] with filters [F, Cin, K] + bias [F]."""
    if stride < 1:
        raise ConfigurationError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim != 2 or w.ndim != 3 or bias.ndim != 1:
        raise ConfigurationError(
            f"conv1d expects x[Cin,T], w[F,Cin,K], bias[F]; got {x.shape}, {w.shape}, {bias.shape}"
        )
    cin, t_len = x.shape
    f, w_cin, k = w.shape
    if w_cin != cin or bias.shape[0] != f:
        raise ConfigurationError(
            f"conv1d channel mismatch: x has {cin}, w expects {w_cin}, bias {bias.shape[0]} vs {f}"
        )
    if t_len < k:
        raise InputTooShortError(f"input length {t_len} shorter than kernel {k}")

    out = _conv1d_gather(x.data, w.data, stride) + bias.data[:, None]

    def vjp(g):
        gx = _conv1d_scatter(g, w.data, stride, out_len=t_len)
        gw = _conv1d_weight_grad(g, x.data, k, stride)
        gb = g.sum(axis=1)
        return gx, gw, gb

    return _make_out(out, (x, w, bias), vjp, "conv1d")


def conv1d_transpose(y: Tensor, w: Tensor, stride: int) -> Tensor:
    """Transposed convolution of [F, T'] with filters [F, Cout, K].

    Exact adjoint of the linear map in :func:`conv1d`; output length is
    (T' - 1) * stride + K.
    """
    if stride < 1:
        raise ConfigurationError(f"conv1d_transpose stride must be >= 1, got {stride}")
    if y.ndim != 2 or w.ndim != 3:
        raise ConfigurationError(
            f"conv1d_transpose expects y[F,T'], w[F,Cout,K]; got {y.shape}, {w.shape}"
        )
    f, tp = y.shape
    if w.shape[0] != f:
        raise ConfigurationError(
            f"conv1d_transpose filter mismatch: y has {f} channels, w {w.shape[0]}"
        )
    k = w.shape[2]

    def vjp(g):
        gy = _conv1d_gather(g, w.data, stride)
        gw = _conv1d_weight_grad(y.data, g, k, stride)
        return gy, gw

    return _make_out(_conv1d_scatter(y.data, w.data, stride), (y, w), vjp, "conv1d_transpose")


# ---------------------------------------------------------------------------
# Layer normalization
# ---------------------------------------------------------------------------


def layer_norm(z: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = z.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ConfigurationError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    mu = z.data.mean(axis=-1, keepdims=True)
    centered = z.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gg = g * gain.data
        gz = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        return gz, ggain, gbias

    return _make_out(out, (z, gain, bias), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# Misc helpers
# ---------------------------------------------------------------------------


def dot(x: Tensor, y: Tensor) -> Tensor:
    """Full inner product of two equally-shaped tensors (scalar output)."""
    if x.shape != y.shape:
        raise ConfigurationError(f"dot shape mismatch: {x.shape} vs {y.shape}")
    return tsum(mul(x, y))


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    """L2 norm over the concatenation of plain numpy arrays."""
    total = 0.0
    for a in arrays:
        total += float(np.dot(a.ravel(), a.ravel()))
    return float(np.sqrt(total))
