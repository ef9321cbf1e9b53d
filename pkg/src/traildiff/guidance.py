"""Conditioning mechanisms for guided sampling.

Three imputation variants write known values into the chain: on the noisy
sample x_{t-1} (with matching forward noise), on the clean prediction
x0_hat, and on a projected x0_hat (unproject, impute, project back, so the
mask always addresses real features). Classifier-style guidance shifts the
posterior mean along -s * Sigma_t * grad G, where the gradient comes from
differentiating the goal through the denoiser itself: the dense signal is
what lets a handful of keyframe cells steer every channel of x_t.

Masked combinations keep the two mechanisms complementary: cells the mask
imputes never receive a guidance shift, and vice versa.

These are pure tensor transforms. The pipeline gates them by
GuidanceConfig.active(t): below t_stop everything switches off and the
chain runs free, which keeps the final steps on-manifold.

Gradients land on every trainable tensor the graph touches; samplers run
on frozen copies (engine.param_tensors) and the train loop zeroes grads
each step, so the pollution is benign in both homes.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import denoiser
from .errors import InvalidArgument, NumericFailure
from .goals import goal_term
from .seq import GROUND_CHANNELS, TRAJ_CHANNELS, TrajSeq


@dataclass(frozen=True)
class GuidanceConfig:
    s: float = 100.0
    t_stop: int = 20
    p: int = 1

    def __post_init__(self):
        if self.s < 0:
            raise InvalidArgument("guidance strength s must be >= 0")
        if not isinstance(self.t_stop, (int, np.integer)) or self.t_stop < 0:
            raise InvalidArgument("t_stop must be an integer >= 0")
        if self.p not in (1, 2):
            raise InvalidArgument("goal norm p must be 1 or 2")

    def active(self, t):
        """Guidance and imputation run at step t, cease below t_stop."""
        return t >= self.t_stop


# -- masks and zero-filled targets --------------------------------------------

def check_mask(mask, like=None):
    """Validate a 0/1 mask; returns it as float64."""
    m = np.asarray(mask, dtype=np.float64)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InvalidArgument("mask entries must be 0 or 1")
    if like is not None:
        shape = np.shape(like)
        if m.shape != shape and m.shape != shape[-2:]:
            raise InvalidArgument(
                f"mask shape {m.shape} does not match tensor {shape}")
    return m


def zero_fill(values, n_channels, channels=TRAJ_CHANNELS):
    """P: scatter (k, M) rows into a zero (n_channels, M) tensor."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != len(channels):
        raise InvalidArgument(
            f"expected ({len(channels)}, M) values for channels {channels}, "
            f"got {v.shape}")
    out = np.zeros((n_channels, v.shape[1]))
    out[list(channels)] = v
    return out


def traj_mask(n_channels, n_frames, channels=TRAJ_CHANNELS):
    m = np.zeros((n_channels, n_frames))
    m[list(channels)] = 1.0
    return m


def keyframe_mask(n_channels, n_frames, keys, channels=GROUND_CHANNELS):
    keys.check_range(n_frames)
    m = np.zeros((n_channels, n_frames))
    for c in channels:
        m[c, keys.frames] = 1.0
    return m


def keyframe_target(n_channels, n_frames, keys, channels=GROUND_CHANNELS):
    """Zero-filled tensor holding the key locations at their frames."""
    keys.check_range(n_frames)
    out = np.zeros((n_channels, n_frames))
    out[np.asarray(channels)[:, None], keys.frames] = keys.locations.T
    return out


def _target_tensor(y, shape, channels):
    """Coerce a target (TrajSeq, (k, M) rows, or full tensor) to shape."""
    if isinstance(y, TrajSeq):
        y = y.data
    y = np.asarray(y, dtype=np.float64)
    n, M = shape[-2], shape[-1]
    if y.shape == shape or y.shape == (n, M):
        return y
    if y.ndim == 2 and y.shape == (len(channels), M):
        return zero_fill(y, n, channels)
    raise InvalidArgument(f"target shape {y.shape} incompatible with {shape}")


# -- imputation ----------------------------------------------------------------

def impute_sample(x_prev, y, mask, sched, t, rng, channels=TRAJ_CHANNELS):
    """Overwrite masked cells of x_{t-1} with the target noised to its level.

    The replacement is sqrt(alpha_bar[t-1]) y + sqrt(1 - alpha_bar[t-1]) eps,
    with eps drawn once for the full tensor shape.
    """
    x = np.asarray(x_prev)
    m = check_mask(mask, x)
    target = _target_tensor(y, x.shape, channels)
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= sched.T:
        raise InvalidArgument(f"step t={t!r} outside 1..{sched.T}")
    ab = float(sched.alpha_bar[t - 1])
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    eps = rng.standard_normal(x.shape)
    noised = np.sqrt(ab) * target + np.sqrt(1.0 - ab) * eps
    return ((1.0 - m) * x + m * noised).astype(x.dtype, copy=False)


def impute_x0(x0_pred, z_star, mask, channels=TRAJ_CHANNELS):
    """Overwrite masked cells of the clean prediction; no noise involved."""
    x = np.asarray(x0_pred)
    m = check_mask(mask, x)
    target = _target_tensor(z_star, x.shape, channels)
    return ((1.0 - m) * x + m * target).astype(x.dtype, copy=False)


def impute_x0_projected(proj, x0p_pred, z_star, mask, channels=TRAJ_CHANNELS):
    """Imputation under emphasis projection: unproject, impute, project.

    Deliberately the literal composition - the mask addresses real feature
    cells, so both matrix factors (including the norm) appear on each side.
    """
    return proj.apply(impute_x0(proj.apply_inv(x0p_pred), z_star, mask, channels))


# -- guidance shifts -------------------------------------------------------------

def guidance_shift(mu, sigma_t, grad, s):
    """mu - s * Sigma_t * grad: the classifier-guidance mean update."""
    if sigma_t < 0:
        raise InvalidArgument("Sigma_t must be >= 0")
    if s < 0:
        raise InvalidArgument("s must be >= 0")
    mu = np.asarray(mu)
    grad = np.asarray(grad)
    if grad.shape != mu.shape:
        raise InvalidArgument(f"grad shape {grad.shape} != mu shape {mu.shape}")
    return (mu - (s * sigma_t) * grad).astype(mu.dtype, copy=False)


def masked_guided_mean(mu_tilde, sigma_t, grad, s, mask, proj=None):
    """Guidance restricted to non-imputed cells.

    Unprojected: mu - (1-mask) * s * Sigma_t * grad. Projected: the shift is
    masked in real-feature space and carried back through the normalized A,
    with grad taken w.r.t. the projected state (dense_gradient with proj).
    """
    if sigma_t < 0:
        raise InvalidArgument("Sigma_t must be >= 0")
    if s < 0:
        raise InvalidArgument("s must be >= 0")
    mu = np.asarray(mu_tilde)
    grad = np.asarray(grad)
    if grad.shape != mu.shape:
        raise InvalidArgument(f"grad shape {grad.shape} != mu shape {mu.shape}")
    m = check_mask(mask, mu)
    shift = (s * sigma_t) * grad
    if proj is None:
        out = mu - (1.0 - m) * shift
    else:
        out = mu + proj.apply((1.0 - m) * (-shift))
    return out.astype(mu.dtype, copy=False)


# -- dense gradients through the denoiser ------------------------------------------

@dataclass(frozen=True)
class WorldGoal:
    """Adapter: evaluate a world-unit goal on normalized ground channels.

    Obstacle SDFs live in world coordinates and normalization is a
    per-channel affine, so the denormalization has to sit inside the
    differentiated function; value/grad apply it and chain the scale.
    """

    goal: object
    mean: np.ndarray  # (2, 1)
    std: np.ndarray   # (2, 1)

    def value(self, ground):
        return self.goal.value(np.asarray(ground) * self.std + self.mean)

    def grad(self, ground):
        return self.goal.grad(np.asarray(ground) * self.std + self.mean) * self.std


def world_goal(goal, stats, ground_channels=GROUND_CHANNELS):
    idx = list(ground_channels)
    return WorldGoal(goal=goal,
                     mean=stats.mean[idx][:, None],
                     std=stats.std[idx][:, None])


def dense_gradient(params, cfg, sched, x_t, t, cond, goal, *, proj=None,
                   ground_channels=GROUND_CHANNELS, predict=None):
    """d(goal)/d(x_t) through the x0 prediction of the denoiser.

    Graph: x_t -> predict_x0 -> (unproject if proj) -> ground channels ->
    goal. With proj the input is the projected state and the returned
    gradient is w.r.t. those coordinates (the inverse matrix is a graph
    node). The goal sees normalized ground values; wrap it in world_goal
    when it speaks world units. `predict` swaps in a designated model
    function (defaults to the denoiser's own predict_x0).
    """
    x = np.asarray(x_t)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    predict = denoiser.predict_x0 if predict is None else predict
    xt = ad.param(x.copy())
    with ad.Tape() as tape:
        x0 = predict(params, cfg, xt, t, cond, sched)
        if proj is not None:
            x0 = ad.mix_channels(x0, proj.inverse_matrix)
        ground = ad.gather_channels(x0, ground_channels)
        loss = goal_term(goal, ground)
    ad.backward(tape, loss)
    g = xt.grad
    if g is None:
        g = np.zeros_like(x)
    if not np.all(np.isfinite(g)):
        raise NumericFailure(f"non-finite guidance gradient at t={t}")
    g = g.astype(x.dtype, copy=False)
    return g[0] if squeeze else g
