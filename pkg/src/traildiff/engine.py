"""Training loop and unguided ancestral sampler for the denoiser nets.

Training is stateless across steps: step s draws its batch indices,
timesteps, noise, and label dropout from a Generator keyed by
(seed, s), so a run resumed from a checkpoint replays exactly the
draws it would have seen uninterrupted. The sampler keys its noise the
same way, by (seed, 0) for x_T and (seed, t) for the step-t transition
noise, which makes matched-seed comparisons between guided and
unguided chains share every draw.

The per-step hook is the extension point the guided pipeline plugs
into: each hook is called as hook(t, x_t, x0_hat, mu, sigma2) after the
default transition has been formed and may return a replacement
x_{t-1}. Hooks that return None leave the chain bit-identical to plain
sampling.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import denoiser
from .errors import InvalidArgument, NumericFailure
from .seq import ABS, NORM, TRAJ_CHANNELS, MotionSeq


def keyed_rng(*key):
    """Fresh Generator for a tuple key; same key, same stream, always."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    lr: float
    total_samples: int
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0
    ema_beta: float = 0.9999
    loss_scale_k: float = 1.0
    seed: int = 0
    # Labels are dropped to the null id at this rate so the net also
    # learns the unconditional score (classifier-free guidance).
    cond_dropout: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        # lr = 0 is allowed as a diagnostic no-op run.
        if self.lr < 0:
            raise InvalidArgument("lr must be >= 0")
        if self.total_samples < 1:
            raise InvalidArgument("total_samples must be >= 1")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be >= 0")
        if self.grad_clip_norm <= 0:
            raise InvalidArgument("grad_clip_norm must be > 0")
        if not 0.0 <= self.ema_beta < 1.0:
            raise InvalidArgument("ema_beta must be in [0, 1)")
        if self.loss_scale_k < 1.0:
            raise InvalidArgument("loss_scale_k must be >= 1")
        if self.seed < 0:
            raise InvalidArgument("seed must be a non-negative integer")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise InvalidArgument("cond_dropout must be in [0, 1)")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgument(f"{name} must be in [0, 1)")
        if self.adam_eps <= 0:
            raise InvalidArgument("adam_eps must be > 0")

    @property
    def n_steps(self):
        return -(-self.total_samples // self.batch_size)


def _batch_array(batch, traj_channels):
    """Stack a batch given as an ndarray or a sequence of MotionSeq."""
    if isinstance(batch, np.ndarray):
        if batch.ndim != 3:
            raise InvalidArgument(f"batch array must be (B, C, M), got {batch.shape}")
        return batch, tuple(traj_channels)
    if isinstance(batch, MotionSeq):
        batch = [batch]
    seqs = list(batch)
    if not seqs:
        raise InvalidArgument("empty batch")
    for s in seqs:
        s.require(space=NORM)
    x = np.stack([s.data for s in seqs])
    return x, tuple(seqs[0].traj_channels)


def _check_k(cfg, k):
    if k < 1.0:
        raise InvalidArgument("loss scale k must be >= 1")
    if k > 1.0 and cfg.prediction_target == "epsilon":
        raise InvalidArgument(
            "loss scale k > 1 is defined only for x0-target nets; "
            "epsilon residuals have no trajectory channels to emphasize"
        )


def _loss_graph(params, cfg, x0, t, eps, cond, sched, k, traj_channels):
    """Weighted diffusion loss as an autodiff scalar.

    mean over batch of sum_j w_j^2 ||x0_hat^(j) - x0^(j)||^2 with
    w_j = k on trajectory channels and 1 elsewhere (k multiplies inside
    the square). Epsilon nets regress eps with all weights 1.
    """
    x_t = sched.q_sample(x0, t, eps).astype(x0.dtype, copy=False)
    pred = denoiser.forward_batch(params, cfg, ad.tensor(x_t), t, cond)
    target = eps if cfg.prediction_target == "epsilon" else x0
    res = ad.sub(pred, target)
    if k != 1.0:
        w = np.ones((x0.shape[1], 1), dtype=x0.dtype)
        w[list(traj_channels)] = k
        res = ad.mul(res, w)
    return ad.scale(ad.l2_norm_squared(res), 1.0 / x0.shape[0])


def diffusion_loss(params, cfg, batch, cond, sched, k=1.0, rng=None,
                   traj_channels=TRAJ_CHANNELS):
    """Monte Carlo diffusion loss of a batch (value only, no gradients).

    Samples t uniformly in 1..T per item and one noise draw per item
    from rng (anything np.random.default_rng accepts).
    """
    x0, traj = _batch_array(batch, traj_channels)
    _check_k(cfg, k)
    rng = np.random.default_rng(rng)
    t = rng.integers(1, sched.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape, dtype=x0.dtype)
    loss = _loss_graph(params, cfg, x0, t, eps, cond, sched, k, traj)
    return float(loss.data)


def init_opt_state(params):
    """Zeroed AdamW moments, one pair per parameter."""
    m = {k: np.zeros_like(p.data) for k, p in params.items()}
    v = {k: np.zeros_like(p.data) for k, p in params.items()}
    return m, v


def init_ema(params):
    return {k: p.data.copy() for k, p in params.items()}


def param_tensors(arrays, requires_grad=False):
    """Wrap EMA or checkpointed arrays as parameter Tensors.

    The default gives frozen copies for sampling. Pass requires_grad=True
    when the tensors go back into train(); frozen tensors are invisible
    to backward, so training them would silently decay in place.
    """
    return {k: ad.tensor(a.copy(), requires_grad=requires_grad)
            for k, a in arrays.items()}


def global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.vdot(p.grad, p.grad).real)
    return math.sqrt(total)


def adamw_step(params, m, v, step, *, lr, weight_decay, beta1, beta2, eps):
    """One decoupled-weight-decay Adam update; step counts from 1."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        mk, vk = m[name], v[name]
        mk *= beta1
        mk += (1.0 - beta1) * g
        vk *= beta2
        vk += (1.0 - beta2) * g * g
        update = (mk / c1) / (np.sqrt(vk / c2) + eps)
        p.data -= lr * (update + weight_decay * p.data)


def ema_update(ema, params, beta):
    for name, p in params.items():
        e = ema[name]
        e *= beta
        e += (1.0 - beta) * p.data


def train_step(params, cfg, tcfg, data, labels, sched, step, m, v, ema,
               traj_channels=TRAJ_CHANNELS):
    """One optimization step; returns (loss, grad_norm before clipping).

    All randomness comes from keyed_rng(seed, step) in a fixed draw
    order (batch indices, timesteps, noise, label dropout), so the step
    is a pure function of (params, opt state, step index).
    """
    rng = keyed_rng(tcfg.seed, step)
    n = data.shape[0]
    idx = rng.integers(0, n, size=tcfg.batch_size)
    t = rng.integers(1, sched.T + 1, size=tcfg.batch_size)
    eps = rng.standard_normal((tcfg.batch_size,) + data.shape[1:],
                              dtype=data.dtype)
    drop = rng.random(tcfg.batch_size) < tcfg.cond_dropout

    null_id = cfg.null_id
    if labels is None:
        cond = np.full(tcfg.batch_size, null_id)
    else:
        cond = np.where(drop, null_id, labels[idx])

    for p in params.values():
        p.grad = None
    try:
        with ad.Tape() as tape:
            loss = _loss_graph(params, cfg, data[idx], t, eps, cond, sched,
                               tcfg.loss_scale_k, traj_channels)
        if not np.isfinite(loss.data):
            raise NumericFailure("loss is not finite")
        ad.backward(tape, loss)
    except NumericFailure as e:
        raise NumericFailure(f"training diverged at step {step}: {e}") from e

    gn = global_grad_norm(params)
    if not math.isfinite(gn):
        raise NumericFailure(f"gradient diverged at step {step}")
    if gn > tcfg.grad_clip_norm:
        scale = tcfg.grad_clip_norm / gn
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale

    adamw_step(params, m, v, step + 1, lr=tcfg.lr,
               weight_decay=tcfg.weight_decay, beta1=tcfg.adam_beta1,
               beta2=tcfg.adam_beta2, eps=tcfg.adam_eps)
    ema_update(ema, params, tcfg.ema_beta)
    return float(loss.data), gn


def train(params, cfg, tcfg, dataset, sched, *, ema=None, opt=None,
          start_step=0, traj_channels=TRAJ_CHANNELS, log_path=None,
          checkpoint_every=0, on_checkpoint=None, log_every=1):
    """Train in place for tcfg.n_steps steps; returns (params, ema, opt).

    dataset is (data (N, C, M) normalized, labels (N,) ints or None).
    Pass the ema/opt dicts from a checkpoint plus start_step to resume;
    the keyed per-step rng makes the continuation exact. on_checkpoint,
    if given, is called as on_checkpoint(next_step, params, ema, opt)
    every checkpoint_every steps and at the end.
    """
    for name, p in params.items():
        if not p.requires_grad:
            raise InvalidArgument(
                f"param {name} does not require gradients; wrap checkpoint "
                "arrays with param_tensors(..., requires_grad=True)")
    data, labels = dataset
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[0] == 0:
        raise InvalidArgument("dataset must be a nonempty (N, C, M) array")
    _check_k(cfg, tcfg.loss_scale_k)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (data.shape[0],):
            raise InvalidArgument("labels must be one id per sequence")

    if opt is None:
        m, v = init_opt_state(params)
    else:
        m, v = opt["m"], opt["v"]
    if ema is None:
        ema = init_ema(params)

    log = writer = None
    if log_path is not None:
        log = open(log_path, "a" if start_step > 0 else "w", newline="")
        writer = csv.writer(log)
        if start_step == 0:
            writer.writerow(["step", "loss", "grad_norm"])

    try:
        for step in range(start_step, tcfg.n_steps):
            loss, gn = train_step(params, cfg, tcfg, data, labels, sched,
                                  step, m, v, ema, traj_channels)
            if writer is not None and (step % log_every == 0
                                       or step == tcfg.n_steps - 1):
                writer.writerow([step, f"{loss:.8e}", f"{gn:.8e}"])
            done = step + 1
            if on_checkpoint is not None and (
                    done == tcfg.n_steps
                    or (checkpoint_every > 0 and done % checkpoint_every == 0)):
                on_checkpoint(done, params, ema, {"m": m, "v": v})
    finally:
        if log is not None:
            log.close()
    return params, ema, {"m": m, "v": v}


def predict_x0_batch(params, cfg, x, t, cond, sched, cfg_weight=1.0):
    """x0 estimate for a batch at scalar timestep t, as a plain array.

    cfg_weight w blends conditional and null predictions as
    w * cond + (1 - w) * null before the epsilon-to-x0 conversion
    (the conversion is affine, so blending before or after agrees).
    """
    out = denoiser.forward_batch(params, cfg, ad.tensor(x), t, cond).data
    if cfg_weight != 1.0 and cond is not None:
        null = np.full(x.shape[0], cfg.null_id)
        out_u = denoiser.forward_batch(params, cfg, ad.tensor(x), t, null).data
        out = denoiser.cfg_combine(out, out_u, cfg_weight)
    if cfg.prediction_target == "epsilon":
        out = sched.x0_from_eps(x, t, out)
    return out.astype(x.dtype, copy=False)


def ddpm_sample_batch(params, cfg, sched, cond=None, n_frames=64, seed=0,
                      hooks=(), n_samples=1, cfg_weight=1.0):
    """Ancestral sampling of n_samples chains at once; returns (B, C, M).

    Iterates t = T..1 with x_{t-1} ~ N(a*x0_hat + b*x_t, sigma2), no
    noise at t = 1. Hooks run in order after the default transition is
    drawn; each may return a replacement x_{t-1} and the last
    replacement wins, so composition is the caller's job. The transition
    noise at step t comes from keyed_rng(seed, t) and x_T from
    keyed_rng(seed, 0), independent of what hooks do.
    """
    if seed < 0:
        raise InvalidArgument("seed must be a non-negative integer")
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    dtype = next(iter(params.values())).data.dtype
    shape = (n_samples, cfg.in_channels, n_frames)
    if cond is not None and np.ndim(cond) == 0:
        cond = np.full(n_samples, int(cond))

    x = keyed_rng(seed, 0).standard_normal(shape, dtype=dtype)
    for t in range(sched.T, 0, -1):
        x0_hat = predict_x0_batch(params, cfg, x, t, cond, sched, cfg_weight)
        a, b, sigma2 = sched.posterior_coefficients(t)
        mu = (a * x0_hat + b * x).astype(dtype, copy=False)
        if not np.isfinite(mu).all():
            raise NumericFailure(f"non-finite posterior mean at t={t}")
        if t > 1:
            z = keyed_rng(seed, t).standard_normal(shape, dtype=dtype)
            x_prev = mu + math.sqrt(sigma2) * z
        else:
            x_prev = mu
        for hook in hooks:
            r = hook(t, x, x0_hat, mu, sigma2)
            if r is not None:
                r = np.asarray(r, dtype=dtype)
                if r.shape != shape:
                    raise InvalidArgument(
                        f"hook returned shape {r.shape}, expected {shape}")
                x_prev = r
        x = x_prev
    return x


def ddpm_sample(params, cfg, sched, cond=None, n_frames=64, seed=0, hooks=(),
                cfg_weight=1.0, frame=ABS, space=NORM,
                traj_channels=TRAJ_CHANNELS):
    """Single-sequence sampler; see ddpm_sample_batch for the chain."""
    x = ddpm_sample_batch(params, cfg, sched, cond, n_frames, seed, hooks,
                          1, cfg_weight)
    return MotionSeq(x[0], frame=frame, space=space,
                     traj_channels=tuple(traj_channels))
