"""Two-stage guided generation.

Stage 1 samples a root trajectory from a small epsilon-prediction net
under dense classifier guidance plus keyframe (or point-to-point)
imputation. Stage 2 samples the full motion from an x0-prediction net
that lives in emphasis-projected space, imputing the stage-1 trajectory
on every frame and applying masked projected guidance. A single-stage
variant does everything with the motion net alone.

All conditioning signals arrive in world units; each op normalizes with
its model's stats and denormalizes on the way out. Guidance, imputation
and the point-to-point override are all gated by GuidanceConfig.active,
so below t_stop every run is bit-identical to plain ancestral sampling
continued from the same state (the hook returns None and the engine's
own transition stands).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import NormStats, invert_norm
from .denoiser import DenoiserConfig
from .errors import InvalidArgument
from .guidance import (
    GuidanceConfig,
    dense_gradient,
    guidance_shift,
    impute_sample,
    impute_x0_projected,
    keyframe_mask,
    masked_guided_mean,
    traj_mask,
    world_goal,
)
from .seq import ABS, GROUND_CHANNELS, RAW, MotionSeq, TrajSeq

MODES = ("two_stage", "single_stage")


@dataclass(frozen=True)
class PipelineConfig:
    tau: int = 0            # point-to-point imputation active for t >= tau
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    mode: str = "two_stage"
    use_p2p: bool = False
    c_emphasis: float = 10.0
    seed: int = 0
    # Stage 2 imputes the whole stage-1 trajectory by default; False
    # narrows imputation to the keyed cells only (the literal ablation).
    full_traj_imputation: bool = True

    def __post_init__(self):
        if not isinstance(self.tau, (int, np.integer)) or self.tau < 0:
            raise InvalidArgument(f"tau must be an integer >= 0, got {self.tau!r}")
        if not isinstance(self.guidance, GuidanceConfig):
            raise InvalidArgument("guidance must be a GuidanceConfig")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.c_emphasis < 1.0:
            raise InvalidArgument("c_emphasis must be >= 1")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise InvalidArgument("seed must be a non-negative integer")


@dataclass(frozen=True)
class TrajModel:
    """Trajectory net: 3 channels (rot, x, z), normalized space."""

    params: dict
    cfg: DenoiserConfig
    stats: NormStats

    def __post_init__(self):
        if self.cfg.in_channels != 3 or self.stats.n_channels != 3:
            raise InvalidArgument(
                f"trajectory model needs 3 channels, got net {self.cfg.in_channels} "
                f"/ stats {self.stats.n_channels}")


@dataclass(frozen=True)
class MotionModel:
    """Motion net over all N channels, trained in projected space."""

    params: dict
    cfg: DenoiserConfig
    stats: NormStats

    def __post_init__(self):
        if self.cfg.in_channels != self.stats.n_channels:
            raise InvalidArgument(
                f"net channels {self.cfg.in_channels} != stats channels "
                f"{self.stats.n_channels}")


def p2p_trajectory(keys, n_frames):
    """Straight-line trajectory through the keyframes, in world units.

    Locations interpolate linearly in frame index and hold constant
    outside the keyed range; the rot row carries each segment's heading
    (held at the boundaries, zero when there is a single key).
    """
    if keys is None or len(keys) == 0:
        raise InvalidArgument("point-to-point trajectory needs at least one keyframe")
    keys.check_range(n_frames)
    t = np.arange(n_frames)
    x = np.interp(t, keys.frames, keys.locations[:, 0])
    z = np.interp(t, keys.frames, keys.locations[:, 1])
    rot = np.zeros(n_frames)
    if len(keys) > 1:
        heading = np.arctan2(np.diff(keys.locations[:, 1]),
                             np.diff(keys.locations[:, 0]))
        seg = np.searchsorted(keys.frames, t, side="right") - 1
        rot = heading[np.clip(seg, 0, heading.size - 1)]
    return TrajSeq(np.vstack([rot, x, z]), frame=ABS, space=RAW)


def _traj_norm(stats, rows):
    """(3, M) world-unit trajectory rows -> normalized, float64."""
    return ((np.asarray(rows, dtype=np.float64) - stats.mean[:3, None])
            / stats.std[:3, None])


def _key_target(stats, n_channels, n_frames, keys):
    """Zero-filled (N, M) tensor holding normalized key locations."""
    idx = list(GROUND_CHANNELS)
    norm = (keys.locations - stats.mean[idx]) / stats.std[idx]
    out = np.zeros((n_channels, n_frames))
    out[np.asarray(idx)[:, None], keys.frames] = norm.T
    return out


def _cond_array(cond, n_samples):
    if cond is None:
        return None
    return np.full(n_samples, int(cond))


def _check_tau(pcfg, sched):
    if pcfg.tau > sched.T:
        raise InvalidArgument(f"tau={pcfg.tau} exceeds T={sched.T}")


def stage1_trajectory(model, sched, goal, keys, pcfg, cond=None, n_frames=64,
                      n_samples=1):
    """Guided trajectory sampling; returns TrajSeq (list when n_samples > 1).

    Per active step: shift the posterior mean by the dense goal gradient,
    redraw the keyed transition noise, then impute the keyframes (or, for
    t >= tau with use_p2p, the whole point-to-point trajectory) at the
    step's noise level.
    """
    gcfg = pcfg.guidance
    _check_tau(pcfg, sched)
    have_keys = keys is not None and len(keys) > 0
    if pcfg.use_p2p and not have_keys:
        raise InvalidArgument("use_p2p needs keyframes")
    if have_keys:
        keys.check_range(n_frames)
        key_mask = keyframe_mask(3, n_frames, keys)
        key_target = _key_target(model.stats, 3, n_frames, keys)
    if pcfg.use_p2p:
        p2p_target = _traj_norm(model.stats, p2p_trajectory(keys, n_frames).data)
        p2p_mask = np.ones((3, n_frames))
    wrapped = None if goal is None or gcfg.s == 0 else world_goal(goal, model.stats)
    params, cfg, seed = model.params, model.cfg, pcfg.seed
    carr = _cond_array(cond, n_samples)

    def hook(t, z_t, z0_hat, mu, sigma2):
        if not gcfg.active(t):
            return None
        p2p_now = pcfg.use_p2p and t >= pcfg.tau
        key_now = have_keys and not p2p_now
        if wrapped is None and not (p2p_now or key_now):
            return None
        base = mu
        if wrapped is not None:
            g = dense_gradient(params, cfg, sched, z_t, t, carr, wrapped)
            base = guidance_shift(mu, sigma2, g, gcfg.s)
        if t > 1:
            z = engine.keyed_rng(seed, t).standard_normal(z_t.shape,
                                                          dtype=z_t.dtype)
            z_prev = base + math.sqrt(sigma2) * z
        else:
            z_prev = base
        if p2p_now:
            z_prev = impute_sample(z_prev, p2p_target, p2p_mask, sched, t,
                                   engine.keyed_rng(seed, t, 1))
        elif key_now:
            z_prev = impute_sample(z_prev, key_target, key_mask, sched, t,
                                   engine.keyed_rng(seed, t, 1))
        return z_prev

    out = engine.ddpm_sample_batch(params, cfg, sched, cond=carr,
                                   n_frames=n_frames, seed=seed,
                                   hooks=(hook,), n_samples=n_samples)
    raw = invert_norm(model.stats, out)
    seqs = [TrajSeq(raw[i], frame=ABS, space=RAW) for i in range(n_samples)]
    return seqs[0] if n_samples == 1 else seqs


def _motion_hook(model, proj, sched, pcfg, carr, wrapped, step_plan):
    """Shared stage-2/single-stage step: impute on x0_hat, rebuild the
    posterior mean, apply masked projected guidance, redraw keyed noise.

    step_plan(t) -> (mask, target) or (None, None) when nothing is imputed
    at that step.
    """
    gcfg = pcfg.guidance
    params, cfg, seed = model.params, model.cfg, pcfg.seed

    def hook(t, x_t, x0_hat, mu, sigma2):
        if not gcfg.active(t):
            return None
        mask, target = step_plan(t)
        if mask is None and wrapped is None:
            return None
        base = mu
        if mask is not None:
            x0_tilde = impute_x0_projected(proj, x0_hat, target, mask)
            a, b, _ = sched.posterior_coefficients(t)
            base = (a * x0_tilde + b * x_t).astype(x_t.dtype, copy=False)
        if wrapped is not None:
            g = dense_gradient(params, cfg, sched, x_t, t, carr, wrapped,
                               proj=proj)
            gmask = mask if mask is not None else np.zeros(x_t.shape[-2:])
            base = masked_guided_mean(base, sigma2, g, gcfg.s, gmask, proj=proj)
        if t > 1:
            z = engine.keyed_rng(seed, t).standard_normal(x_t.shape,
                                                          dtype=x_t.dtype)
            return base + math.sqrt(sigma2) * z
        return base

    return hook


def _run_motion(model, proj, sched, pcfg, carr, hook, n_frames, n_samples):
    out = engine.ddpm_sample_batch(model.params, model.cfg, sched, cond=carr,
                                   n_frames=n_frames, seed=pcfg.seed,
                                   hooks=(hook,), n_samples=n_samples)
    raw = invert_norm(model.stats, proj.apply_inv(out))
    seqs = [MotionSeq(raw[i], frame=ABS, space=RAW) for i in range(n_samples)]
    return seqs[0] if n_samples == 1 else seqs


def _check_proj(model, proj):
    if proj.N != model.cfg.in_channels:
        raise InvalidArgument(
            f"projector is {proj.N}-channel, net is {model.cfg.in_channels}")


def stage2_motion(model, proj, sched, z_star, keys, goal, pcfg, cond=None,
                  n_frames=64, n_samples=1):
    """Trajectory-conditioned motion sampling in projected space.

    The stage-1 trajectory z_star (world units) is imputed on the clean
    prediction each active step - all frames by default, only the keyed
    cells when full_traj_imputation is off. Guidance is masked to the
    complement. z_star=None degenerates to plain (optionally guided)
    sampling.
    """
    _check_proj(model, proj)
    _check_tau(pcfg, sched)
    N = model.cfg.in_channels
    mask = target = None
    if z_star is not None:
        z_star.require(frame=ABS, space=RAW)
        n_frames = z_star.n_frames
        target = _traj_norm(model.stats, z_star.data)
        if pcfg.full_traj_imputation:
            mask = traj_mask(N, n_frames)
        elif keys is not None and len(keys) > 0:
            keys.check_range(n_frames)
            mask = keyframe_mask(N, n_frames, keys)
    wrapped = None if goal is None or pcfg.guidance.s == 0 else \
        world_goal(goal, model.stats)
    carr = _cond_array(cond, n_samples)
    hook = _motion_hook(model, proj, sched, pcfg, carr, wrapped,
                        lambda t: (mask, target))
    return _run_motion(model, proj, sched, pcfg, carr, hook, n_frames, n_samples)


def single_stage(model, proj, sched, keys, goal, pcfg, cond=None, n_frames=64,
                 n_samples=1):
    """One-model baseline: keyframe imputation at keyed cells, the full
    point-to-point trajectory for t >= tau when use_p2p, masked guidance
    for the rest. tau=0 with use_p2p forces the p2p line at every step."""
    _check_proj(model, proj)
    _check_tau(pcfg, sched)
    N = model.cfg.in_channels
    have_keys = keys is not None and len(keys) > 0
    if pcfg.use_p2p and not have_keys:
        raise InvalidArgument("use_p2p needs keyframes")
    key_mask = key_target = None
    if have_keys:
        keys.check_range(n_frames)
        key_mask = keyframe_mask(N, n_frames, keys)
        key_target = _key_target(model.stats, N, n_frames, keys)
    if pcfg.use_p2p:
        p2p_target = _traj_norm(model.stats, p2p_trajectory(keys, n_frames).data)
        p2p_mask = traj_mask(N, n_frames)

    def step_plan(t):
        if pcfg.use_p2p and t >= pcfg.tau:
            return p2p_mask, p2p_target
        return key_mask, key_target

    wrapped = None if goal is None or pcfg.guidance.s == 0 else \
        world_goal(goal, model.stats)
    carr = _cond_array(cond, n_samples)
    hook = _motion_hook(model, proj, sched, pcfg, carr, wrapped, step_plan)
    return _run_motion(model, proj, sched, pcfg, carr, hook, n_frames, n_samples)
