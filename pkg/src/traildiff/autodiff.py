"""Reverse-mode automatic differentiation over dense numpy tensors.

Just enough machinery to train the denoisers and to push goal gradients
back through a frozen denoiser: a Tensor wrapper, a Tape recording
(output, pullback) pairs in execution order, and a closed set of ops.
Gradients flow only into Tensors with requires_grad=True; plain ndarrays
(and Tensors with requires_grad=False) are constants, which is what lets
a guidance pass skip every weight-gradient GEMM.

Broadcasting is deliberately narrow: Tensor-Tensor ops require equal
shapes; a constant operand may broadcast against a Tensor only if the
result keeps the Tensor's shape (scalars, per-channel (1,C,1) weights).
Anything wider gets its own op with explicit reductions in the pullback
(add_row, affine_modulate) so every gradient path stays auditable.

Ops raise NumericFailure as soon as they produce a non-finite value while
CHECK_FINITE is on (the default; flip it off to shave a few percent from
training steps).
"""

import math

import numpy as np

from . import kernels
from .errors import InvalidArgument, InvalidState, NumericFailure

CHECK_FINITE = True

_ACTIVE = None  # innermost recording tape, if any


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def param(data):
    return Tensor(np.asarray(data), requires_grad=True)


class Tape:
    """Records ops while active; single-owner during recording and backward."""

    def __init__(self):
        self.ops = []  # (out, pullback, grad_inputs) in execution order
        self._consumed = False
        self._prev = None

    def __enter__(self):
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._prev
        return False


def backward(tape, output):
    """Seed d(output)=1 and run every recorded pullback in reverse.

    output must be scalar. Leaves that took part in the recording but lie
    on no path to output end with zero (not None) gradients.
    """
    if not isinstance(output, Tensor) or output.data.shape != ():
        raise InvalidArgument("backward needs a scalar output tensor")
    if tape._consumed:
        raise InvalidState("tape already consumed by a previous backward")
    tape._consumed = True
    output.grad = np.ones((), dtype=output.data.dtype)
    for out, pullback, _ in reversed(tape.ops):
        if out.grad is not None:
            pullback(out.grad)
    for _, _, inputs in tape.ops:
        for t in inputs:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# -- op plumbing -------------------------------------------------------------

def _val(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _rg(x):
    return isinstance(x, Tensor) and x.requires_grad


def _acc(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _emit(name, data, pullback, grad_inputs):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericFailure(f"{name} produced non-finite values")
    out = Tensor(data, requires_grad=bool(grad_inputs))
    if _ACTIVE is not None and grad_inputs:
        _ACTIVE.ops.append((out, pullback, grad_inputs))
    return out


def _graded(*xs):
    return tuple(x for x in xs if _rg(x))


def _guard_const_broadcast(name, out_shape, *graded):
    for t in graded:
        if t.data.shape != out_shape:
            raise InvalidArgument(
                f"{name}: operand shape {t.data.shape} would broadcast to "
                f"{out_shape}; only constants may broadcast"
            )


# -- elementwise arithmetic ----------------------------------------------------

def _ewise(name, f, xd, yd):
    try:
        return f(xd, yd)
    except ValueError as exc:
        raise InvalidArgument(f"{name}: {exc}") from None


def add(x, y):
    xd, yd = _val(x), _val(y)
    out = _ewise("add", np.add, xd, yd)
    gi = _graded(x, y)
    _guard_const_broadcast("add", out.shape, *gi)

    def pb(g):
        if _rg(x):
            _acc(x, g)
        if _rg(y):
            _acc(y, g)

    return _emit("add", out, pb, gi)


def sub(x, y):
    xd, yd = _val(x), _val(y)
    out = _ewise("sub", np.subtract, xd, yd)
    gi = _graded(x, y)
    _guard_const_broadcast("sub", out.shape, *gi)

    def pb(g):
        if _rg(x):
            _acc(x, g)
        if _rg(y):
            _acc(y, -g)

    return _emit("sub", out, pb, gi)


def mul(x, y):
    xd, yd = _val(x), _val(y)
    out = _ewise("mul", np.multiply, xd, yd)
    gi = _graded(x, y)
    _guard_const_broadcast("mul", out.shape, *gi)

    def pb(g):
        if _rg(x):
            _acc(x, g * yd)
        if _rg(y):
            _acc(y, g * xd)

    return _emit("mul", out, pb, gi)


def scale(x, k):
    xd = _val(x)
    k = float(k)
    gi = _graded(x)

    def pb(g):
        _acc(x, k * g)

    return _emit("scale", k * xd, pb, gi)


def add_row(x, b):
    """(B, D) plus a (D,) row; the row's gradient sums over the batch."""
    xd, bd = _val(x), _val(b)
    if xd.ndim != 2 or bd.shape != (xd.shape[1],):
        raise InvalidArgument(f"add_row wants (B,D)+(D,), got {xd.shape}+{bd.shape}")

    def pb(g):
        if _rg(x):
            _acc(x, g)
        if _rg(b):
            _acc(b, g.sum(axis=0))

    return _emit("add_row", xd + bd, pb, _graded(x, b))


# -- linear maps ---------------------------------------------------------------

def matmul(x, w):
    xd, wd = _val(x), _val(w)
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise InvalidArgument(f"matmul wants (A,B)@(B,C), got {xd.shape}@{wd.shape}")

    def pb(g):
        if _rg(x):
            _acc(x, g @ wd.T)
        if _rg(w):
            _acc(w, xd.T @ g)

    return _emit("matmul", xd @ wd, pb, _graded(x, w))


def mix_channels(x, P):
    """y[b,i,m] = sum_j P[i,j] x[b,j,m]: a channel-space linear map."""
    xd, Pd = _val(x), _val(P)
    if xd.ndim != 3 or Pd.ndim != 2 or Pd.shape[1] != xd.shape[1]:
        raise InvalidArgument(
            f"mix_channels wants (I,J) applied to (B,J,M), got {Pd.shape} on {xd.shape}"
        )
    out = np.tensordot(Pd, xd, axes=(1, 1)).transpose(1, 0, 2)

    def pb(g):
        if _rg(x):
            _acc(x, np.tensordot(Pd.T, g, axes=(1, 1)).transpose(1, 0, 2))
        if _rg(P):
            _acc(P, np.tensordot(g, xd, axes=([0, 2], [0, 2])))

    return _emit("mix_channels", np.ascontiguousarray(out), pb, _graded(x, P))


def conv1d(x, w, bias=None):
    """Same-padded temporal conv over (B, C, M); odd kernel width."""
    xd, wd = _val(x), _val(w)
    bd = _val(bias) if bias is not None else None
    out = kernels.conv1d_forward(xd, wd, bd)
    K = wd.shape[2]

    def pb(g):
        if _rg(x):
            _acc(x, kernels.conv1d_backward_x(g, wd))
        if _rg(w):
            _acc(w, kernels.conv1d_backward_w(xd, g, K))
        if bias is not None and _rg(bias):
            _acc(bias, g.sum(axis=(0, 2)))

    return _emit("conv1d", out, pb, _graded(x, w, bias))


# -- normalization and modulation ----------------------------------------------

def group_norm(x, groups, eps=1e-5):
    xd = _val(x)
    y, rstd = kernels.group_norm_forward(xd, groups, eps)

    def pb(g):
        _acc(x, kernels.group_norm_backward(g, y, rstd, groups))

    return _emit("group_norm", y, pb, _graded(x))


def affine_modulate(x, scl, shift):
    """y = x * (1 + scl) + shift with per-channel scl/shift.

    x is (B, C, M); scl and shift are both (B, C) (conditioning-derived)
    or both (C,) (learned affine).
    """
    xd, sd, hd = _val(x), _val(scl), _val(shift)
    if xd.ndim != 3 or sd.shape != hd.shape:
        raise InvalidArgument(
            f"affine_modulate wants (B,C,M) with matching scl/shift, "
            f"got {xd.shape}, {sd.shape}, {hd.shape}"
        )
    if sd.shape == (xd.shape[0], xd.shape[1]):
        se, he = sd[:, :, None], hd[:, :, None]
        red = (2,)
    elif sd.shape == (xd.shape[1],):
        se, he = sd[None, :, None], hd[None, :, None]
        red = (0, 2)
    else:
        raise InvalidArgument(f"scl shape {sd.shape} fits neither (B,C) nor (C,)")

    def pb(g):
        if _rg(x):
            _acc(x, g * (1.0 + se))
        if _rg(scl):
            _acc(scl, (g * xd).sum(axis=red))
        if _rg(shift):
            _acc(shift, g.sum(axis=red))

    return _emit("affine_modulate", xd * (1.0 + se) + he, pb, _graded(x, scl, shift))


def mish(x):
    xd = _val(x)
    out = kernels.mish_forward(xd)

    def pb(g):
        _acc(x, kernels.mish_backward(xd, g))

    return _emit("mish", out, pb, _graded(x))


# -- reductions and norms --------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None):  # noqa: A001 - deliberate, used as ad.sum
    xd = _val(x)
    ax = _norm_axis(axis, xd.ndim)
    out = xd.sum(axis=ax)

    def pb(g):
        ge = np.expand_dims(g, ax) if g.ndim != xd.ndim else g
        _acc(x, np.broadcast_to(ge, xd.shape))

    return _emit("sum", out, pb, _graded(x))


def mean(x, axis=None):
    xd = _val(x)
    ax = _norm_axis(axis, xd.ndim)
    n = math.prod(xd.shape[a] for a in ax)
    out = xd.mean(axis=ax)

    def pb(g):
        ge = np.expand_dims(g, ax) if g.ndim != xd.ndim else g
        _acc(x, np.broadcast_to(ge, xd.shape) / n)

    return _emit("mean", out, pb, _graded(x))


def sqrt(x):
    xd = _val(x)
    if np.any(xd < 0):
        raise InvalidArgument("sqrt of negative values")
    out = np.sqrt(xd)

    def pb(g):
        # subgradient 0 at exactly 0, same convention as l1_norm
        _acc(x, np.divide(g, 2.0 * out, out=np.zeros_like(out), where=out > 0))

    return _emit("sqrt", out, pb, _graded(x))


def l1_norm(x):
    """sum|x|; the subgradient at 0 is 0 so exactly-met targets stay put."""
    xd = _val(x)

    def pb(g):
        _acc(x, g * np.sign(xd))

    return _emit("l1_norm", np.abs(xd).sum(), pb, _graded(x))


def l2_norm_squared(x):
    xd = _val(x)

    def pb(g):
        _acc(x, g * (2.0 * xd))

    return _emit("l2_norm_squared", (xd * xd).sum(), pb, _graded(x))


def clip_max(x, bound):
    """min(x, bound); gradient passes only where x < bound (0 at the bound)."""
    xd = _val(x)
    bound = float(bound)
    mask = xd < bound

    def pb(g):
        _acc(x, g * mask)

    return _emit("clip_max", np.minimum(xd, bound), pb, _graded(x))


# -- selection -------------------------------------------------------------------

def mask_select(x, mask):
    """x * mask for a constant 0/1 mask (broadcastable, shape-preserving)."""
    xd = _val(x)
    md = np.asarray(mask)
    out = xd * md
    if out.shape != xd.shape:
        raise InvalidArgument(f"mask shape {md.shape} enlarges {xd.shape}")

    def pb(g):
        _acc(x, g * md)

    return _emit("mask_select", out, pb, _graded(x))


def gather_channels(x, idx):
    """Select channels of (B, C, M): y = x[:, idx, :]."""
    xd = _val(x)
    if xd.ndim != 3:
        raise InvalidArgument(f"gather_channels wants (B,C,M), got {xd.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= xd.shape[1]):
        raise InvalidArgument(f"bad channel index list for C={xd.shape[1]}")
    out = np.ascontiguousarray(xd[:, idx, :])

    def pb(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, (slice(None), idx), g)
        _acc(x, gx)

    return _emit("gather_channels", out, pb, _graded(x))


def concat_channels(xs):
    datas = [_val(x) for x in xs]
    out = np.concatenate(datas, axis=1)
    offsets = np.cumsum([0] + [d.shape[1] for d in datas])

    def pb(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if _rg(x):
                _acc(x, g[:, lo:hi])

    return _emit("concat_channels", out, pb, _graded(*xs))


# -- embeddings ------------------------------------------------------------------

def embedding_lookup(table, ids):
    """Rows of a (V, D) table at integer ids (B,)."""
    td = _val(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InvalidArgument("embedding ids must be integers")
    if np.any(ids < 0) or np.any(ids >= td.shape[0]):
        raise InvalidArgument(f"embedding id outside 0..{td.shape[0] - 1}")

    def pb(g):
        gt = np.zeros_like(td)
        np.add.at(gt, ids, g)
        _acc(table, gt)

    return _emit("embedding_lookup", td[ids], pb, _graded(table))


def sinusoid_embed(t, dim, dtype=np.float64):
    """(B, dim) interleaved sin/cos features of scalar positions t.

    Column 2i is sin(t * w_i), column 2i+1 is cos(t * w_i) with
    geometrically spaced frequencies, so t=0 maps to [0, 1, 0, 1, ...].
    Constant with respect to the graph (t is never differentiated).
    """
    if dim % 2 != 0:
        raise InvalidArgument(f"embedding dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    out = np.empty((t.shape[0], dim), dtype=dtype)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return _emit("sinusoid_embed", out, None, ())


# -- structure ops ----------------------------------------------------------------

def avgpool2(x):
    """Halve the frame axis of (B, C, M) by averaging pairs; M must be even."""
    xd = _val(x)
    if xd.ndim != 3 or xd.shape[2] % 2 != 0:
        raise InvalidArgument(f"avgpool2 wants even M, got {xd.shape}")
    out = 0.5 * (xd[:, :, 0::2] + xd[:, :, 1::2])

    def pb(g):
        _acc(x, 0.5 * np.repeat(g, 2, axis=2))

    return _emit("avgpool2", out, pb, _graded(x))


def upsample2(x):
    """Double the frame axis of (B, C, M) by nearest-neighbor repeat."""
    xd = _val(x)
    if xd.ndim != 3:
        raise InvalidArgument(f"upsample2 wants (B,C,M), got {xd.shape}")

    def pb(g):
        _acc(x, g[:, :, 0::2] + g[:, :, 1::2])

    return _emit("upsample2", np.repeat(xd, 2, axis=2), pb, _graded(x))


def custom_op(x, fn, vjp, name="custom"):
    """Escape hatch for analytically differentiated functions.

    fn(data) -> out_data; vjp(data, g_out) -> g_in of data's shape.
    Used for pieces whose gradient is cheaper analytic than composed
    (the signed-distance field evaluation).
    """
    xd = _val(x)
    out = fn(xd)

    def pb(g):
        _acc(x, vjp(xd, g))

    return _emit(name, np.asarray(out), pb, _graded(x))
