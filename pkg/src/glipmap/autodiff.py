"""Small reverse-mode autodiff engine over 4-D float64 arrays.

Only the operators the generator needs are provided: strided 2-D
convolution, nearest-neighbour upsampling, LeakyReLU, batch normalization,
channel concatenation, sigmoid and the masked squared-error loss, plus the
ADAM optimizer.

Operations are recorded on the active :class:`Tape` (a context manager)
whenever one of their inputs requires a gradient::

    with Tape() as tape:
        loss = masked_sq_loss(net(z), target, mask)
    backward(loss, params)
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError

LEAKY_SLOPE = 0.2

_state = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "tape")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations; replayed backwards once."""

    def __init__(self):
        self._records = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, backward_fn):
        if self.consumed:
            raise RuntimeError("cannot record on a consumed tape")
        out.tape = self
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor):
        if self.consumed:
            raise RuntimeError("backward called twice on a consumed tape")
        if loss.tape is not self:
            raise ValidationError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
        for out, _ in self._records:
            out.grad = None
        self._records.clear()
        self.consumed = True


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _send(t: Tensor, g):
    if t.requires_grad:
        t._accumulate(g)


def backward(loss: Tensor, params: "ParamStore | None" = None):
    """Run the reverse pass of the tape that produced ``loss``.

    Parameters untouched by the graph end up with an all-zero gradient.
    """
    if loss.tape is None:
        if loss.requires_grad:
            raise ValidationError("loss was not produced by a recorded forward pass")
    else:
        loss.tape.backward(loss)
    if params is not None:
        params.mark_backward()


# -- parameters --------------------------------------------------------------


class ParamStore:
    """Named parameters in a stable insertion order."""

    def __init__(self):
        self._params = OrderedDict()
        self._has_grads = False

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None
        self._has_grads = False

    def mark_backward(self):
        for p in self._params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        self._has_grads = True

    @property
    def has_grads(self) -> bool:
        return self._has_grads

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}


class Adam:
    """ADAM with bias correction. Gradients are left in place; the caller clears them."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: ParamStore):
        if not params.has_grads:
            raise RuntimeError("adam step before any backward pass")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params:
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# -- operators -----------------------------------------------------------------


def _pads(padding):
    if isinstance(padding, (int, np.integer)):
        if padding < 0:
            raise ValidationError(f"padding must be >= 0, got {padding}")
        return (int(padding),) * 4
    pads = tuple(int(p) for p in padding)
    if len(pads) != 4 or min(pads) < 0:
        raise ValidationError(f"padding must be an int or (top, bottom, left, right), got {padding}")
    return pads


def same_padding(k: int) -> tuple[int, int, int, int]:
    """Padding that keeps stride-1 output size; even kernels get the extra row/col at bottom/right."""
    lo = (k - 1) // 2
    hi = k - 1 - lo
    return (lo, hi, lo, hi)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``w`` (O,C,kH,kW).

    ``padding`` is an int or a (top, bottom, left, right) tuple of zero padding.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValidationError(f"conv2d needs 4-D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ValidationError(f"conv2d channel mismatch: input has {C} channels, weight expects {Cw}")
    if b is not None and b.shape != (O,):
        raise ValidationError(f"conv2d bias shape {b.shape} does not match {O} output channels")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    pt, pb, pl, pr = _pads(padding)
    Hp, Wp = H + pt + pb, W + pl + pr
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if Hp < kh or Ho < 1:
        raise ValidationError(f"conv2d rows: kernel {kh} does not fit padded height {Hp}")
    if Wp < kw or Wo < 1:
        raise ValidationError(f"conv2d cols: kernel {kw} does not fit padded width {Wp}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # (B,C,Ho,Wo,kh,kw) x (O,C,kh,kw) -> (B,Ho,Wo,O)
    y = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b.data[None, :, None, None]
    out = Tensor(np.ascontiguousarray(y))

    def bw(g):
        if w.requires_grad:
            _send(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            _send(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # (B,O,Ho,Wo) x (O,C,kh,kw) -> (B,Ho,Wo,C,kh,kw)
            cols = np.tensordot(g, w.data, axes=([1], [0]))
            gxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _send(x, gxp[:, :, pt:pt + H, pl:pl + W])

    return _record(out, [t for t in (x, w, b) if t is not None], bw)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValidationError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        y = x.data.copy()
    else:
        y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    out = Tensor(y)

    def bw(g):
        B, C, H, W = x.shape
        _send(x, g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)))

    return _record(out, [x], bw)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0 < slope < 1:
        raise ValidationError(f"leaky_relu slope must be in (0, 1), got {slope}")
    pos = x.data >= 0
    out = Tensor(np.where(pos, x.data, slope * x.data))

    def bw(g):
        _send(x, np.where(pos, g, slope * g))

    return _record(out, [x], bw)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(y)

    def bw(g):
        _send(x, g * y * (1.0 - y))

    return _record(out, [x], bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over (batch, rows, cols) with batch statistics."""
    B, C, H, W = x.shape
    n = B * H * W
    if n < 2:
        raise ValidationError(f"batch_norm needs >= 2 values per channel, got {n}")
    if not eps > 0:
        raise ValidationError("batch_norm requires eps > 0")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValidationError(f"batch_norm affine params must have shape ({C},)")
    mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g4 = gamma.data[None, :, None, None]
    out = Tensor(g4 * xhat + beta.data[None, :, None, None])

    def bw(g):
        if gamma.requires_grad:
            _send(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _send(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * g4
            gx_mean = gx.mean(axis=(0, 2, 3), keepdims=True)
            proj = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
            _send(x, inv * (gx - gx_mean - xhat * proj))

    return _record(out, [x, gamma, beta], bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValidationError("concat_channels needs 4-D tensors")
    sa, sb = a.shape, b.shape
    for axis, label in ((0, "batch"), (2, "rows"), (3, "cols")):
        if sa[axis] != sb[axis]:
            raise ValidationError(f"concat_channels {label} mismatch: {sa[axis]} vs {sb[axis]}")
    ca = sa[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def bw(g):
        _send(a, g[:, :ca])
        _send(b, g[:, ca:])

    return _record(out, [a, b], bw)


def masked_sq_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over the cells where ``mask`` is 1.

    ``target`` and ``mask`` are plain arrays broadcastable to ``pred``
    (typically (M, N) against a (1, 1, M, N) prediction). Unmasked cells
    receive exactly zero gradient.
    """
    target = np.asarray(getattr(target, "values", target), dtype=np.float64)
    mask = np.asarray(getattr(mask, "bits", mask))
    if target.shape != mask.shape or target.shape != pred.shape[-2:]:
        raise ValidationError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    k = int(np.count_nonzero(mask)) * (pred.data.size // mask.size)
    if k == 0:
        raise ValidationError("no observed points")
    # where() rather than a product: keeps unmasked entries at +0.0 whatever the target holds
    diff = np.where(mask != 0, pred.data - target, 0.0)
    out = Tensor(np.float64((diff * diff).sum() / k))

    def bw(g):
        _send(pred, (2.0 * g / k) * diff)

    return _record(out, [pred], bw)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    a = math.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape)
