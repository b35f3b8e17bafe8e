"""Dense numeric kernels and a minimal reverse-mode gradient tape.

All kernels operate on float64 numpy arrays and are deterministic given
their inputs. The same kernels back both the inference path (``RawOps``)
and the training path (``GradTape``), so a forward pass produces
bit-identical values whether or not gradients are being recorded.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

# Shared epsilon for every layer/channel normalization in the toolkit.
LN_EPS = 1e-5

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class InputTooShortError(ValueError):
    """Signal shorter than the convolution kernel."""

    def __init__(self, length: int, kernel: int):
        super().__init__(
            f"input of length {length} is shorter than kernel of size {kernel}"
        )
        self.length = length
        self.kernel = kernel


class NumericInstabilityError(ArithmeticError):
    """A gradient check ran through a non-finite intermediate."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Forward kernels
# ---------------------------------------------------------------------------


def matmul(a, b) -> np.ndarray:
    a = _as_f64(a)
    b = _as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} are incompatible")
    return a @ b


def conv1d(signal, kernels, stride: int = 1, groups: int = 1) -> np.ndarray:
    """Valid (unpadded) cross-correlation.

    signal: (C_in, L); kernels: (C_out, C_in/groups, K) -> (C_out, L_out)
    with L_out = floor((L - K) / stride) + 1. No kernel flip.
    """
    signal = _as_f64(signal)
    kernels = _as_f64(kernels)
    if signal.ndim != 2 or kernels.ndim != 3:
        raise ShapeError(
            f"conv1d expects (C_in, L) signal and (C_out, C_in/groups, K) kernels, "
            f"got {signal.shape} and {kernels.shape}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    c_in, length = signal.shape
    c_out, c_per_group, k = kernels.shape
    if c_in % groups != 0 or c_out % groups != 0:
        raise ShapeError(
            f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}"
        )
    if c_per_group != c_in // groups:
        raise ShapeError(
            f"kernel expects {c_per_group} input channels per group, "
            f"signal provides {c_in // groups}"
        )
    if length < k:
        raise InputTooShortError(length, k)
    windows = np.lib.stride_tricks.sliding_window_view(signal, k, axis=1)[:, ::stride, :]
    l_out = windows.shape[1]
    out = np.empty((c_out, l_out), dtype=np.float64)
    ci, co = c_in // groups, c_out // groups
    for g in range(groups):
        out[g * co : (g + 1) * co] = np.einsum(
            "oik,ilk->ol",
            kernels[g * co : (g + 1) * co],
            windows[g * ci : (g + 1) * ci],
            optimize=True,
        )
    return out


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = _as_f64(x)
    gain = _as_f64(gain)
    bias = _as_f64(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match D={d}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gain * xhat + bias


def channel_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    """Normalize each channel (row) of a (C, T) map over time, then affine.

    Equivalent to a group norm with one group per channel.
    """
    x = _as_f64(x)
    gain = _as_f64(gain)
    bias = _as_f64(bias)
    if x.ndim != 2:
        raise ShapeError(f"channel_norm expects (C, T), got {x.shape}")
    c = x.shape[0]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(
            f"channel_norm affine shapes {gain.shape}/{bias.shape} do not match C={c}"
        )
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gain[:, None] * xhat + bias[:, None]


def softmax(x) -> np.ndarray:
    """Stable softmax over the last axis."""
    x = _as_f64(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x) -> np.ndarray:
    x = _as_f64(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def gelu(x) -> np.ndarray:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))."""
    x = _as_f64(x)
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x) -> np.ndarray:
    x = _as_f64(x)
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner


def gelu_erf(x) -> np.ndarray:
    """Exact GELU, 0.5 x (1 + erf(x / sqrt(2))); matches published encoder
    checkpoints whose headers request the erf flavor."""
    x = _as_f64(x)
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_erf_grad(x) -> np.ndarray:
    x = _as_f64(x)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x**2) / math.sqrt(
        2.0 * math.pi
    )


def cross_entropy(logits, labels, class_weights=None) -> float:
    """Mean softmax cross-entropy of (B, C) logits against int labels."""
    logits = _as_f64(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy expects (B, C) logits and (B,) labels, "
            f"got {logits.shape} and {labels.shape}"
        )
    lsm = log_softmax(logits)
    picked = lsm[np.arange(labels.size), labels]
    if class_weights is None:
        return float(-picked.mean())
    w = _as_f64(class_weights)[labels]
    return float(-(w * picked).sum() / w.sum())


# ---------------------------------------------------------------------------
# Backend protocol: RawOps mirrors GradTape's op set on plain arrays
# ---------------------------------------------------------------------------


class RawOps:
    """Tape-free backend; every method takes and returns plain arrays."""

    add = staticmethod(lambda a, b: _as_f64(a) + _as_f64(b))
    mul = staticmethod(lambda a, b: _as_f64(a) * _as_f64(b))
    matmul = staticmethod(matmul)
    conv1d = staticmethod(conv1d)
    layer_norm = staticmethod(layer_norm)
    channel_norm = staticmethod(channel_norm)
    softmax = staticmethod(softmax)
    gelu = staticmethod(gelu)
    gelu_erf = staticmethod(gelu_erf)

    @staticmethod
    def scale(a, c: float):
        return _as_f64(a) * float(c)

    @staticmethod
    def transpose(x):
        return _as_f64(x).T

    @staticmethod
    def concat(parts, axis: int = 0):
        return np.concatenate([_as_f64(p) for p in parts], axis=axis)

    @staticmethod
    def slice_last(x, lo: int, hi: int):
        return _as_f64(x)[..., lo:hi]

    @staticmethod
    def pad_last(x, left: int, right: int):
        x = _as_f64(x)
        width = [(0, 0)] * (x.ndim - 1) + [(left, right)]
        return np.pad(x, width)

    @staticmethod
    def stack_rows(parts):
        return np.stack([_as_f64(p) for p in parts], axis=0)

    @staticmethod
    def mean_axis0(x):
        return _as_f64(x).mean(axis=0)

    @staticmethod
    def max_axis0(x):
        return _as_f64(x).max(axis=0)

    @staticmethod
    def sum_all(x):
        return _as_f64(x).sum()

    @staticmethod
    def cross_entropy(logits, labels, class_weights=None):
        return np.float64(cross_entropy(logits, labels, class_weights))


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------


class Var:
    """Value node tracked by a :class:`GradTape`."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = _as_f64(value)
        self.grad = None


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else _as_f64(x)


def _tracked(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _add_grad(x, g) -> None:
    if isinstance(x, Var):
        x.grad = g if x.grad is None else x.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class GradTape:
    """Ordered record of primitive ops for one forward pass.

    Ops accept a mix of plain arrays (constants) and :class:`Var` nodes.
    An op touching no Var computes eagerly and records nothing; once a Var
    enters the data path, outputs become Vars and a backward closure is
    appended per op. ``gradients`` replays the closures in exact reverse
    order and leaves the tape empty.
    """

    def __init__(self):
        self._records: list = []

    # -- bookkeeping --------------------------------------------------------

    def param(self, value) -> Var:
        return Var(value)

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, value, backward) -> Var:
        out = Var(value)
        self._records.append((out, backward))
        return out

    def gradients(self, loss: Var, params: Sequence[Var]) -> list:
        """Backprop from a scalar loss; returns grads aligned with params."""
        if not isinstance(loss, Var):
            raise ShapeError("loss does not depend on any tracked Var")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
        for p in params:
            p.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, backward in reversed(self._records):
            if out.grad is not None:
                backward(out.grad)
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
        ]
        for p in params:
            p.grad = None
        self._records.clear()
        return grads

    # -- primitive ops -------------------------------------------------------

    def add(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = av + bv
        if not _tracked(a, b):
            return out

        def backward(g):
            _add_grad(a, _unbroadcast(g, av.shape))
            _add_grad(b, _unbroadcast(g, bv.shape))

        return self._emit(out, backward)

    def mul(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = av * bv
        if not _tracked(a, b):
            return out

        def backward(g):
            _add_grad(a, _unbroadcast(g * bv, av.shape))
            _add_grad(b, _unbroadcast(g * av, bv.shape))

        return self._emit(out, backward)

    def scale(self, a, c: float):
        av = value_of(a)
        out = av * float(c)
        if not _tracked(a):
            return out

        def backward(g):
            _add_grad(a, g * float(c))

        return self._emit(out, backward)

    def matmul(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = matmul(av, bv)
        if not _tracked(a, b):
            return out

        def backward(g):
            _add_grad(a, g @ bv.T)
            _add_grad(b, av.T @ g)

        return self._emit(out, backward)

    def transpose(self, x):
        xv = value_of(x)
        out = xv.T
        if not _tracked(x):
            return out

        def backward(g):
            _add_grad(x, g.T)

        return self._emit(out, backward)

    def concat(self, parts, axis: int = 0):
        vals = [value_of(p) for p in parts]
        out = np.concatenate(vals, axis=axis)
        if not _tracked(*parts):
            return out
        sizes = [v.shape[axis] for v in vals]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                _add_grad(part, g[tuple(sl)])

        return self._emit(out, backward)

    def slice_last(self, x, lo: int, hi: int):
        xv = value_of(x)
        out = xv[..., lo:hi]
        if not _tracked(x):
            return out

        def backward(g):
            full = np.zeros_like(xv)
            full[..., lo:hi] = g
            _add_grad(x, full)

        return self._emit(out, backward)

    def pad_last(self, x, left: int, right: int):
        xv = value_of(x)
        out = RawOps.pad_last(xv, left, right)
        if not _tracked(x):
            return out
        t = xv.shape[-1]

        def backward(g):
            _add_grad(x, g[..., left : left + t])

        return self._emit(out, backward)

    def stack_rows(self, parts):
        vals = [value_of(p) for p in parts]
        out = np.stack(vals, axis=0)
        if not _tracked(*parts):
            return out

        def backward(g):
            for i, part in enumerate(parts):
                _add_grad(part, g[i])

        return self._emit(out, backward)

    def mean_axis0(self, x):
        xv = value_of(x)
        out = xv.mean(axis=0)
        if not _tracked(x):
            return out
        n = xv.shape[0]

        def backward(g):
            _add_grad(x, np.broadcast_to(g / n, xv.shape).copy())

        return self._emit(out, backward)

    def max_axis0(self, x):
        xv = value_of(x)
        out = xv.max(axis=0)
        if not _tracked(x):
            return out
        idx = xv.argmax(axis=0)  # first maximum wins on ties
        cols = np.arange(xv.shape[1]) if xv.ndim == 2 else None

        def backward(g):
            full = np.zeros_like(xv)
            if cols is None:
                full[idx] = g
            else:
                full[idx, cols] = g
            _add_grad(x, full)

        return self._emit(out, backward)

    def sum_all(self, x):
        xv = value_of(x)
        out = xv.sum()
        if not _tracked(x):
            return out

        def backward(g):
            _add_grad(x, np.full(xv.shape, float(g)))

        return self._emit(out, backward)

    def gelu(self, x):
        xv = value_of(x)
        out = gelu(xv)
        if not _tracked(x):
            return out

        def backward(g):
            _add_grad(x, g * gelu_grad(xv))

        return self._emit(out, backward)

    def gelu_erf(self, x):
        xv = value_of(x)
        out = gelu_erf(xv)
        if not _tracked(x):
            return out

        def backward(g):
            _add_grad(x, g * gelu_erf_grad(xv))

        return self._emit(out, backward)

    def softmax(self, x):
        xv = value_of(x)
        p = softmax(xv)
        if not _tracked(x):
            return p

        def backward(g):
            _add_grad(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

        return self._emit(p, backward)

    def layer_norm(self, x, gain, bias, eps: float = LN_EPS):
        xv, gv, bv = value_of(x), value_of(gain), value_of(bias)
        out = layer_norm(xv, gv, bv, eps)
        if not _tracked(x, gain, bias):
            return out
        mu = xv.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(xv.var(axis=-1, keepdims=True) + eps)
        xhat = (xv - mu) * inv

        def backward(g):
            if isinstance(x, Var):
                dxhat = g * gv
                dx = inv * (
                    dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
                )
                _add_grad(x, dx)
            if isinstance(gain, Var):
                _add_grad(gain, (g * xhat).reshape(-1, xv.shape[-1]).sum(axis=0))
            if isinstance(bias, Var):
                _add_grad(bias, g.reshape(-1, xv.shape[-1]).sum(axis=0))

        return self._emit(out, backward)

    def channel_norm(self, x, gain, bias, eps: float = LN_EPS):
        xv, gv, bv = value_of(x), value_of(gain), value_of(bias)
        out = channel_norm(xv, gv, bv, eps)
        if not _tracked(x, gain, bias):
            return out
        mu = xv.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(xv.var(axis=1, keepdims=True) + eps)
        xhat = (xv - mu) * inv

        def backward(g):
            if isinstance(x, Var):
                dxhat = g * gv[:, None]
                dx = inv * (
                    dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
                )
                _add_grad(x, dx)
            if isinstance(gain, Var):
                _add_grad(gain, (g * xhat).sum(axis=1))
            if isinstance(bias, Var):
                _add_grad(bias, g.sum(axis=1))

        return self._emit(out, backward)

    def conv1d(self, signal, kernels, stride: int = 1, groups: int = 1):
        sv, kv = value_of(signal), value_of(kernels)
        out = conv1d(sv, kv, stride=stride, groups=groups)
        if not _tracked(signal, kernels):
            return out
        c_in = sv.shape[0]
        c_out, _, k = kv.shape
        l_out = out.shape[1]
        ci, co = c_in // groups, c_out // groups

        def backward(g):
            windows = np.lib.stride_tricks.sliding_window_view(sv, k, axis=1)[
                :, ::stride, :
            ]
            if isinstance(kernels, Var):
                dk = np.empty_like(kv)
                for gi in range(groups):
                    dk[gi * co : (gi + 1) * co] = np.einsum(
                        "ol,ilk->oik",
                        g[gi * co : (gi + 1) * co],
                        windows[gi * ci : (gi + 1) * ci],
                        optimize=True,
                    )
                _add_grad(kernels, dk)
            if isinstance(signal, Var):
                ds = np.zeros_like(sv)
                for gi in range(groups):
                    gg = g[gi * co : (gi + 1) * co]
                    kg = kv[gi * co : (gi + 1) * co]
                    block = ds[gi * ci : (gi + 1) * ci]
                    for kk in range(k):
                        block[:, kk : kk + stride * l_out : stride] += kg[:, :, kk].T @ gg
                _add_grad(signal, ds)

        return self._emit(out, backward)

    def cross_entropy(self, logits, labels, class_weights=None):
        lv = value_of(logits)
        labels = np.asarray(labels, dtype=np.int64)
        loss = cross_entropy(lv, labels, class_weights)
        if not _tracked(logits):
            return np.float64(loss)
        p = softmax(lv)
        b = labels.size
        if class_weights is None:
            w = np.ones(b)
        else:
            w = _as_f64(class_weights)[labels]
        wsum = w.sum()
        onehot = np.zeros_like(lv)
        onehot[np.arange(b), labels] = 1.0

        def backward(g):
            _add_grad(logits, float(g) * (p - onehot) * (w / wsum)[:, None])

        return self._emit(np.float64(loss), backward)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def finite_difference_check(op, point, step: float = 1e-5) -> float:
    """Compare tape gradients of a scalar-valued op against central differences.

    ``op(tape, *vars) -> scalar Var``; ``point`` is one array or a sequence
    of arrays (one per op argument). Returns the worst relative error with
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if isinstance(point, np.ndarray) or np.isscalar(point):
        points = [_as_f64(point)]
    else:
        points = [_as_f64(p) for p in point]

    tape = GradTape()
    params = [tape.param(p.copy()) for p in points]
    out = op(tape, *params)
    if not isinstance(out, Var) or out.value.size != 1:
        raise ShapeError("finite_difference_check requires a scalar tracked output")
    if not np.isfinite(out.value).all():
        raise NumericInstabilityError("non-finite value in checked op output")
    grads = tape.gradients(out, params)

    def evaluate(which: int, idx, delta: float) -> float:
        shifted = [p.copy() for p in points]
        shifted[which][idx] += delta
        probe_tape = GradTape()
        val = value_of(op(probe_tape, *[probe_tape.param(s) for s in shifted]))
        probe_tape._records.clear()
        return float(val)

    worst = 0.0
    for which, (p, g) in enumerate(zip(points, grads)):
        if not np.isfinite(g).all():
            raise NumericInstabilityError("non-finite analytic gradient")
        for idx in np.ndindex(p.shape):
            f_plus = evaluate(which, idx, +step)
            f_minus = evaluate(which, idx, -step)
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericInstabilityError("non-finite value in finite differences")
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(g[idx])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
