"""1-D UNet denoiser with adaptive group-norm conditioning.

The net maps a noisy (C, M) sequence plus a timestep and an optional class
label to either the clean sequence or the noise that produced it,
depending on cfg.prediction_target. Conditioning enters through AdaGN:
each residual block projects mish(time_emb + label_emb) to a per-channel
scale/shift pair applied after group norm. The label table carries one
extra learned row used as the classifier-free null condition; the time
and label embeddings are combined by summation at a shared width (this
artifact's choice; concatenation would work as well).

Down path / mid / up path all use the same residual block; levels are
joined by average-pool halving and nearest-neighbor doubling, with skip
concatenation on the way up, so M must divide by 2^(depth-1).

All parameters live in a flat dict keyed by stable path strings; that
dict is the checkpoint surface.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument

KERNEL = 5


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int
    base_channels: int
    channel_multipliers: tuple
    groups: int
    prediction_target: str = "epsilon"
    cond_vocab: int = 1
    cond_dim: int = 64
    time_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers",
                           tuple(float(m) for m in self.channel_multipliers))
        if self.prediction_target not in ("x0", "epsilon"):
            raise InvalidArgument(f"bad prediction_target {self.prediction_target!r}")
        if not self.channel_multipliers:
            raise InvalidArgument("need at least one channel multiplier")
        if self.time_dim % 2 != 0:
            raise InvalidArgument("time_dim must be even")
        if min(self.in_channels, self.base_channels, self.groups,
               self.cond_vocab, self.cond_dim) < 1:
            raise InvalidArgument("config dimensions must be positive")
        for ch in self.stage_channels:
            if ch < 1 or ch % self.groups != 0:
                raise InvalidArgument(
                    f"stage width {ch} not divisible by groups={self.groups}"
                )

    @property
    def depth(self):
        return len(self.channel_multipliers)

    @property
    def stage_channels(self):
        return tuple(int(round(self.base_channels * m))
                     for m in self.channel_multipliers)

    @property
    def null_id(self):
        """Label id of the learned unconditional embedding row."""
        return self.cond_vocab

    def descriptor(self):
        return {
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "channel_multipliers": list(self.channel_multipliers),
            "groups": self.groups,
            "prediction_target": self.prediction_target,
            "cond_vocab": self.cond_vocab,
            "cond_dim": self.cond_dim,
            "time_dim": self.time_dim,
        }

    @staticmethod
    def from_descriptor(d):
        return DenoiserConfig(
            in_channels=d["in_channels"],
            base_channels=d["base_channels"],
            channel_multipliers=tuple(d["channel_multipliers"]),
            groups=d["groups"],
            prediction_target=d["prediction_target"],
            cond_vocab=d["cond_vocab"],
            cond_dim=d["cond_dim"],
            time_dim=d["time_dim"],
        )


def _block_defs(cfg):
    """(prefix, cin, cout) for every residual block, in forward order."""
    ch = cfg.stage_channels
    defs = []
    prev = ch[0]
    for i, c in enumerate(ch):
        defs.append((f"down{i}.a", prev, c))
        defs.append((f"down{i}.b", c, c))
        prev = c
    defs.append(("mid.a", prev, prev))
    defs.append(("mid.b", prev, prev))
    for i in range(cfg.depth - 1, -1, -1):
        cout = ch[i - 1] if i > 0 else ch[0]
        defs.append((f"up{i}", 2 * ch[i], cout))
    return defs


def init_params(cfg, seed, dtype=np.float32):
    """Fresh parameter dict. Modulation projections, the learned gn affine,
    and the output conv start at zero so the net begins as the identity-
    conditioned map x -> 0."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    p = {}

    def normal(shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype)

    def zeros(shape):
        return np.zeros(shape, dtype=dtype)

    e = cfg.cond_dim
    p["time_mlp.w1"] = normal((cfg.time_dim, e), cfg.time_dim)
    p["time_mlp.b1"] = zeros(e)
    p["time_mlp.w2"] = normal((e, e), e)
    p["time_mlp.b2"] = zeros(e)
    p["label_embed.table"] = normal((cfg.cond_vocab + 1, e), e)

    ch0 = cfg.stage_channels[0]
    p["in_conv.w"] = normal((ch0, cfg.in_channels, KERNEL), cfg.in_channels * KERNEL)
    p["in_conv.b"] = zeros(ch0)

    for prefix, cin, cout in _block_defs(cfg):
        p[f"{prefix}.conv1.w"] = normal((cout, cin, KERNEL), cin * KERNEL)
        p[f"{prefix}.conv1.b"] = zeros(cout)
        p[f"{prefix}.mod.ws"] = zeros((e, cout))
        p[f"{prefix}.mod.bs"] = zeros(cout)
        p[f"{prefix}.mod.wh"] = zeros((e, cout))
        p[f"{prefix}.mod.bh"] = zeros(cout)
        p[f"{prefix}.conv2.w"] = normal((cout, cout, KERNEL), cout * KERNEL)
        p[f"{prefix}.conv2.b"] = zeros(cout)
        p[f"{prefix}.gn2.gamma"] = zeros(cout)
        p[f"{prefix}.gn2.beta"] = zeros(cout)
        if cin != cout:
            p[f"{prefix}.skip.w"] = normal((cout, cin, 1), cin)
            p[f"{prefix}.skip.b"] = zeros(cout)

    p["out_conv.w"] = zeros((cfg.in_channels, ch0, KERNEL))
    p["out_conv.b"] = zeros(cfg.in_channels)
    return {k: ad.param(v) for k, v in p.items()}


def time_embedding(t, dim):
    """Sinusoidal position features of a single timestep, as a flat vector."""
    if t < 0:
        raise InvalidArgument(f"t must be >= 0, got {t}")
    return ad.sinusoid_embed(np.array([float(t)]), dim).data[0]


def _resblock(p, prefix, h, memb, cin, cout, groups):
    s = ad.add_row(ad.matmul(memb, p[f"{prefix}.mod.ws"]), p[f"{prefix}.mod.bs"])
    sh = ad.add_row(ad.matmul(memb, p[f"{prefix}.mod.wh"]), p[f"{prefix}.mod.bh"])
    y = ad.conv1d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    y = ad.group_norm(y, groups)
    y = ad.affine_modulate(y, s, sh)
    y = ad.mish(y)
    y = ad.conv1d(y, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
    y = ad.group_norm(y, groups)
    y = ad.affine_modulate(y, p[f"{prefix}.gn2.gamma"], p[f"{prefix}.gn2.beta"])
    y = ad.mish(y)
    if cin != cout:
        h = ad.conv1d(h, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
    return ad.add(y, h)


def _cond_ids(cfg, cond, batch):
    if cond is None:
        return np.full(batch, cfg.null_id, dtype=np.intp)
    ids = np.atleast_1d(np.asarray(cond))
    if not np.issubdtype(ids.dtype, np.integer):
        raise InvalidArgument("cond must be integer labels or None")
    if ids.shape == (1,) and batch > 1:
        ids = np.repeat(ids, batch)
    if ids.shape != (batch,):
        raise InvalidArgument(f"cond shape {ids.shape} != batch {batch}")
    if np.any(ids < 0) or np.any(ids > cfg.null_id):
        raise InvalidArgument(f"labels must lie in 0..{cfg.null_id}")
    return ids.astype(np.intp)


def forward_batch(params, cfg, x, t, cond):
    """Denoise a (B, C, M) batch; returns a same-shape prediction Tensor.

    t is a positive int or a (B,) int array; cond is None (all null), an
    int label, or a (B,) int array where cfg.null_id marks the null row.
    Records on the active tape, so this is both the training forward and
    the guidance forward.
    """
    xd = x.data if isinstance(x, ad.Tensor) else np.asarray(x)
    if xd.ndim != 3 or xd.shape[1] != cfg.in_channels:
        raise InvalidArgument(
            f"x must be (B, {cfg.in_channels}, M), got {xd.shape}"
        )
    B, _, M = xd.shape
    if M % (1 << (cfg.depth - 1)) != 0:
        raise InvalidArgument(
            f"M={M} not divisible by 2^(depth-1)={1 << (cfg.depth - 1)}"
        )
    t_arr = np.atleast_1d(np.asarray(t))
    if not np.issubdtype(t_arr.dtype, np.integer) or np.any(t_arr < 1):
        raise InvalidArgument("t must be integer >= 1")
    if t_arr.shape == (1,) and B > 1:
        t_arr = np.repeat(t_arr, B)
    if t_arr.shape != (B,):
        raise InvalidArgument(f"t shape {t_arr.shape} != batch {B}")
    ids = _cond_ids(cfg, cond, B)

    p = params
    dtype = p["in_conv.w"].data.dtype
    temb = ad.sinusoid_embed(t_arr, cfg.time_dim, dtype=dtype)
    temb = ad.add_row(ad.matmul(temb, p["time_mlp.w1"]), p["time_mlp.b1"])
    temb = ad.mish(temb)
    temb = ad.add_row(ad.matmul(temb, p["time_mlp.w2"]), p["time_mlp.b2"])
    lemb = ad.embedding_lookup(p["label_embed.table"], ids)
    memb = ad.mish(ad.add(temb, lemb))

    ch = cfg.stage_channels
    G = cfg.groups
    h = ad.conv1d(x, p["in_conv.w"], p["in_conv.b"])

    skips = []
    prev = ch[0]
    for i, c in enumerate(ch):
        h = _resblock(p, f"down{i}.a", h, memb, prev, c, G)
        h = _resblock(p, f"down{i}.b", h, memb, c, c, G)
        skips.append(h)
        if i < cfg.depth - 1:
            h = ad.avgpool2(h)
        prev = c

    h = _resblock(p, "mid.a", h, memb, prev, prev, G)
    h = _resblock(p, "mid.b", h, memb, prev, prev, G)

    for i in range(cfg.depth - 1, -1, -1):
        cout = ch[i - 1] if i > 0 else ch[0]
        h = ad.concat_channels([h, skips[i]])
        h = _resblock(p, f"up{i}", h, memb, 2 * ch[i], cout, G)
        if i > 0:
            h = ad.upsample2(h)

    return ad.conv1d(h, p["out_conv.w"], p["out_conv.b"])


def forward(params, cfg, x_t, t, cond):
    """Single-sequence surface: (C, M) in, (C, M) prediction out (ndarray)."""
    x = np.asarray(x_t)
    if x.ndim != 2:
        raise InvalidArgument(f"x_t must be (C, M), got {x.shape}")
    out = forward_batch(params, cfg, x[None], t, cond)
    return out.data[0]


def cfg_combine(pred_cond, pred_uncond, w):
    """Classifier-free mix w * cond + (1 - w) * uncond.

    Works on ndarrays (sampling) and on graph Tensors (guided sampling).
    """
    w = float(w)
    if isinstance(pred_cond, ad.Tensor) or isinstance(pred_uncond, ad.Tensor):
        pc = pred_cond if isinstance(pred_cond, ad.Tensor) else ad.tensor(pred_cond)
        pu = pred_uncond if isinstance(pred_uncond, ad.Tensor) else ad.tensor(pred_uncond)
        if pc.data.shape != pu.data.shape:
            raise InvalidArgument("cfg_combine shape mismatch")
        return ad.add(ad.scale(pc, w), ad.scale(pu, 1.0 - w))
    pc, pu = np.asarray(pred_cond), np.asarray(pred_uncond)
    if pc.shape != pu.shape:
        raise InvalidArgument("cfg_combine shape mismatch")
    return w * pc + (1.0 - w) * pu


def predict_x0(params, cfg, x_t, t, cond, sched):
    """The clean-sequence prediction as a graph Tensor.

    x0-target nets return the forward output directly; epsilon-target nets
    convert through x_0 = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t) at the
    (scalar) step t, keeping the whole path differentiable.
    """
    out = forward_batch(params, cfg, x_t, t, cond)
    if cfg.prediction_target == "x0":
        return out
    if not isinstance(t, (int, np.integer)):
        raise InvalidArgument("predict_x0 conversion needs a scalar t")
    ab = sched.alpha_bar[sched._check_t(int(t))]
    x = x_t if isinstance(x_t, ad.Tensor) else ad.tensor(np.asarray(x_t))
    return ad.scale(ad.sub(x, ad.scale(out, np.sqrt(1.0 - ab))), 1.0 / np.sqrt(ab))
