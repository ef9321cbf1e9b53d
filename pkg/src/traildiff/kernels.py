"""Hot numeric kernels with a compiled core and a numpy fallback.

The denoiser spends nearly all of its time in 1-D convolution, group
normalization, and mish. Conv and group norm (forward and backward) are
implemented twice: in `_ckernels` (Cython + BLAS, built by setup.py) and
here in pure numpy. Import picks the compiled backend when present; set
TRAILDIFF_KERNELS=numpy to force the fallback. Both backends implement the
same contracts and are compared by tests/test_kernels.py and
benchmarks/bench_kernels.py. Mish is numpy on both backends: it is
transcendental-bound and numpy's vectorized exp/tanh beat a scalar libm
loop (~2x, see the benchmark), so a compiled version earned nothing.

Conventions: activations are (B, C, M) arrays, conv weights (Cout, Cin, K)
with odd K and same padding, float32 or float64 throughout (both backends
preserve the input dtype).
"""

import os

import numpy as np

from .errors import InvalidArgument

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

if os.environ.get("TRAILDIFF_KERNELS", "").lower() == "numpy":
    _ckernels = None

BACKEND = "compiled" if _ckernels is not None else "numpy"


def _check_float(a, name):
    if a.dtype not in (np.float32, np.float64):
        raise InvalidArgument(f"{name} must be float32/float64, got {a.dtype}")


def _conv_args(x, w):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    _check_float(x, "x")
    if x.ndim != 3 or w.ndim != 3:
        raise InvalidArgument(f"conv1d wants (B,C,M) and (Cout,C,K), got {x.shape}, {w.shape}")
    if w.dtype != x.dtype:
        raise InvalidArgument(f"dtype mismatch: x {x.dtype} vs w {w.dtype}")
    if x.shape[1] != w.shape[1]:
        raise InvalidArgument(f"channel mismatch: x has {x.shape[1]}, w wants {w.shape[1]}")
    if w.shape[2] % 2 != 1:
        raise InvalidArgument(f"kernel size must be odd, got {w.shape[2]}")
    return x, w


def _windows(x_pad, K, M):
    """(B, C, K, M) sliding view over the padded signal; no copy."""
    B, C, _ = x_pad.shape
    s0, s1, s2 = x_pad.strides
    return np.lib.stride_tricks.as_strided(x_pad, (B, C, K, M), (s0, s1, s2, s2))


def _pad(x, P):
    B, C, M = x.shape
    if P == 0:
        return x
    out = np.zeros((B, C, M + 2 * P), dtype=x.dtype)
    out[:, :, P:P + M] = x
    return out


def conv1d_forward(x, w, bias=None):
    """Same-padded cross-correlation: y[b,o,m] = sum_{c,k} w[o,c,k] x[b,c,m+k-K//2]."""
    x, w = _conv_args(x, w)
    if bias is not None:
        bias = np.ascontiguousarray(bias, dtype=x.dtype)
        if bias.shape != (w.shape[0],):
            raise InvalidArgument(f"bias shape {bias.shape} != ({w.shape[0]},)")
    if _ckernels is not None:
        y = _ckernels.conv1d_forward(x, w)
    else:
        K = w.shape[2]
        win = _windows(_pad(x, K // 2), K, x.shape[2])
        y = np.tensordot(w, win, axes=((1, 2), (1, 2))).transpose(1, 0, 2)
        y = np.ascontiguousarray(y)
    if bias is not None:
        y += bias[:, None]
    return y


def conv1d_backward_x(gy, w):
    """Input gradient. Equals a forward conv with the channel-transposed,
    tap-reversed kernel, which is how both backends compute it."""
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
    return conv1d_forward(gy, w_t)


def conv1d_backward_w(x, gy, K):
    """Weight gradient: dw[o,c,k] = sum_{b,m} gy[b,o,m] x_pad[b,c,m+k]."""
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    _check_float(x, "x")
    if gy.dtype != x.dtype:
        raise InvalidArgument(f"dtype mismatch: x {x.dtype} vs gy {gy.dtype}")
    if K % 2 != 1:
        raise InvalidArgument(f"kernel size must be odd, got {K}")
    if x.shape[0] != gy.shape[0] or x.shape[2] != gy.shape[2]:
        raise InvalidArgument(f"incompatible shapes {x.shape} and {gy.shape}")
    if _ckernels is not None:
        return _ckernels.conv1d_backward_w(x, gy, K)
    win = _windows(_pad(x, K // 2), K, x.shape[2])
    return np.tensordot(gy, win, axes=((0, 2), (0, 3)))


def group_norm_forward(x, groups, eps=1e-5):
    """Normalize (B, C, M) per (batch, group) to zero mean, unit variance.

    Returns (y, rstd) with rstd shaped (B, groups); no learned affine here,
    modulation is a separate op.
    """
    x = np.ascontiguousarray(x)
    _check_float(x, "x")
    if x.ndim != 3:
        raise InvalidArgument(f"group_norm wants (B,C,M), got {x.shape}")
    B, C, M = x.shape
    if groups < 1 or C % groups != 0:
        raise InvalidArgument(f"groups={groups} must divide C={C}")
    if _ckernels is not None:
        return _ckernels.group_norm_forward(x, int(groups), float(eps))
    g = x.reshape(B, groups, (C // groups) * M)
    mean = g.mean(axis=2)
    var = g.var(axis=2)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (g - mean[:, :, None]) * rstd[:, :, None]
    return y.reshape(B, C, M), rstd.astype(x.dtype)


def group_norm_backward(gy, y, rstd, groups):
    """dx for group_norm given upstream gy, normalized output y, and rstd."""
    gy = np.ascontiguousarray(gy)
    y = np.ascontiguousarray(y)
    _check_float(gy, "gy")
    if gy.shape != y.shape:
        raise InvalidArgument(f"gy shape {gy.shape} != y shape {y.shape}")
    if _ckernels is not None:
        return _ckernels.group_norm_backward(gy, y, np.ascontiguousarray(rstd), int(groups))
    B, C, M = gy.shape
    gg = gy.reshape(B, groups, -1)
    yg = y.reshape(B, groups, -1)
    m1 = gg.mean(axis=2, keepdims=True)
    m2 = (gg * yg).mean(axis=2, keepdims=True)
    dx = (gg - m1 - yg * m2) * np.asarray(rstd).reshape(B, groups, 1)
    return dx.reshape(B, C, M).astype(gy.dtype, copy=False)


def mish_forward(x):
    """x * tanh(softplus(x)), softplus computed overflow-safe."""
    x = np.ascontiguousarray(x)
    _check_float(x, "x")
    sp = np.logaddexp(x.dtype.type(0), x)
    return x * np.tanh(sp)


def mish_backward(x, gy):
    """gy * mish'(x) with mish'(x) = tanh(sp) + x sech^2(sp) sigmoid(x)."""
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    _check_float(x, "x")
    if x.shape != gy.shape:
        raise InvalidArgument(f"gy shape {gy.shape} != x shape {x.shape}")
    t = np.tanh(np.logaddexp(x.dtype.type(0), x))
    sig = _sigmoid(x)
    return gy * (t + x * (1.0 - t * t) * sig)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
