"""Model checkpoint container.

Layout: 4-byte magic "GMDC", u32 LE format version, u32 LE header length,
a canonical JSON header (sorted keys, no whitespace), then the tensor
payload: float32 little-endian C-order arrays concatenated in manifest
order.  The manifest sorts tensor names, so writing a loaded checkpoint
reproduces the file byte for byte.

Namespaces inside the manifest: "model/" for the live parameters, "ema/"
for the averaged copy, "opt/m/" and "opt/v/" for the Adam moments.  Only
"model/" is mandatory.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import NormStats
from .denoiser import DenoiserConfig
from .errors import InvalidArgument
from .projection import EmphasisProjector
from .schedule import NoiseSchedule

MAGIC = b"GMDC"
VERSION = 1

KIND_TRAJECTORY = "trajectory"
KIND_MOTION = "motion"
KINDS = (KIND_TRAJECTORY, KIND_MOTION)

_U32 = np.dtype("<u4")
_F32LE = np.dtype("<f4")


@dataclass(frozen=True)
class Checkpoint:
    """In-memory form of one saved model: arrays only, no Tensors."""

    kind: str
    cfg: DenoiserConfig
    sched: NoiseSchedule
    stats: NormStats
    params: dict
    proj: EmphasisProjector = None
    ema: dict = None
    opt: dict = None           # {"m": {...}, "v": {...}} or None
    step: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown checkpoint kind {self.kind!r}")
        if self.kind == KIND_MOTION:
            if self.proj is None:
                raise InvalidArgument("motion checkpoints need a projector")
            if self.proj.N != self.cfg.in_channels:
                raise InvalidArgument(
                    f"projector is {self.proj.N}-channel, "
                    f"net is {self.cfg.in_channels}")
        elif self.proj is not None:
            raise InvalidArgument("trajectory checkpoints take no projector")
        if self.stats.mean.shape[0] != self.cfg.in_channels:
            raise InvalidArgument(
                f"norm stats cover {self.stats.mean.shape[0]} channels, "
                f"net has {self.cfg.in_channels}")
        if not self.params:
            raise InvalidArgument("checkpoint has no parameters")
        if not (isinstance(self.step, int) and self.step >= 0):
            raise InvalidArgument(f"bad step {self.step!r}")


def _as_array(v):
    # accept engine Tensors or plain arrays
    return np.asarray(getattr(v, "data", v))


def _flatten(ckpt):
    """Checkpoint -> {manifest name: float32 array}, names namespaced."""
    out = {}
    groups = [("model", ckpt.params), ("ema", ckpt.ema)]
    if ckpt.opt is not None:
        groups += [("opt/m", ckpt.opt.get("m")), ("opt/v", ckpt.opt.get("v"))]
    for prefix, tensors in groups:
        if tensors is None:
            continue
        for name, v in tensors.items():
            a = np.ascontiguousarray(_as_array(v), dtype=_F32LE)
            out[f"{prefix}/{name}"] = a
    return out


def _header(ckpt, flat):
    manifest = [[name, list(flat[name].shape)] for name in sorted(flat)]
    return {
        "kind": ckpt.kind,
        "denoiser": {
            "in_channels": ckpt.cfg.in_channels,
            "base_channels": ckpt.cfg.base_channels,
            "channel_multipliers": list(ckpt.cfg.channel_multipliers),
            "groups": ckpt.cfg.groups,
            "prediction_target": ckpt.cfg.prediction_target,
            "cond_vocab": ckpt.cfg.cond_vocab,
            "cond_dim": ckpt.cfg.cond_dim,
            "time_dim": ckpt.cfg.time_dim,
        },
        "schedule": ckpt.sched.descriptor(),
        "projector": None if ckpt.proj is None else ckpt.proj.descriptor(),
        "norm": {"mean": ckpt.stats.mean.tolist(),
                 "std": ckpt.stats.std.tolist()},
        "step": ckpt.step,
        "tensors": manifest,
    }


def save_checkpoint(path, ckpt):
    """Write one checkpoint file; byte-identical for equal contents."""
    if not isinstance(ckpt, Checkpoint):
        raise InvalidArgument(f"expected a Checkpoint, got {type(ckpt).__name__}")
    flat = _flatten(ckpt)
    head = json.dumps(_header(ckpt, flat), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.asarray([VERSION, len(head)], dtype=_U32).tobytes())
        f.write(head)
        for name in sorted(flat):
            f.write(flat[name].tobytes())


def _split(flat):
    """Manifest dict -> (params, ema, opt) with namespaces stripped."""
    params, ema, m, v = {}, {}, {}, {}
    for name, a in flat.items():
        space, _, rest = name.partition("/")
        if space == "model":
            params[rest] = a
        elif space == "ema":
            ema[rest] = a
        elif space == "opt":
            kind, _, leaf = rest.partition("/")
            (m if kind == "m" else v)[leaf] = a
        else:
            raise InvalidArgument(f"unknown tensor namespace in {name!r}")
    opt = {"m": m, "v": v} if (m or v) else None
    return params, (ema or None), opt


def load_checkpoint(path, kind=None):
    """Read a checkpoint; `kind` asserts the expected model kind before
    the tensor payload is touched."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise InvalidArgument(f"{path}: not a checkpoint file")
    if len(blob) < 12:
        raise InvalidArgument(f"{path}: truncated header")
    version, hlen = np.frombuffer(blob[4:12], dtype=_U32)
    if version != VERSION:
        raise InvalidArgument(
            f"{path}: unsupported checkpoint version {int(version)}")
    try:
        head = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidArgument(f"{path}: bad checkpoint header: {e}") from None

    got_kind = head.get("kind")
    if got_kind not in KINDS:
        raise InvalidArgument(f"{path}: unknown checkpoint kind {got_kind!r}")
    if kind is not None and got_kind != kind:
        raise InvalidArgument(
            f"{path}: checkpoint holds a {got_kind} model, expected {kind}")

    payload = blob[12 + hlen:]
    expect = sum(int(np.prod(shape)) for _, shape in head["tensors"])
    if len(payload) != expect * 4:
        raise InvalidArgument(
            f"{path}: payload holds {len(payload)} bytes, manifest "
            f"declares {expect * 4}")

    flat, off = {}, 0
    for name, shape in head["tensors"]:
        n = int(np.prod(shape))
        a = np.frombuffer(payload, dtype=_F32LE, count=n, offset=off)
        flat[name] = a.reshape(shape).copy()
        off += n * 4
    params, ema, opt = _split(flat)

    d = head["denoiser"]
    cfg = DenoiserConfig(
        in_channels=d["in_channels"], base_channels=d["base_channels"],
        channel_multipliers=tuple(d["channel_multipliers"]), groups=d["groups"],
        prediction_target=d["prediction_target"], cond_vocab=d["cond_vocab"],
        cond_dim=d["cond_dim"], time_dim=d["time_dim"])
    proj = (None if head["projector"] is None
            else EmphasisProjector.from_descriptor(head["projector"]))
    stats = NormStats(mean=np.asarray(head["norm"]["mean"]),
                      std=np.asarray(head["norm"]["std"]))
    return Checkpoint(kind=got_kind, cfg=cfg,
                      sched=NoiseSchedule.from_descriptor(head["schedule"]),
                      stats=stats, params=params, proj=proj, ema=ema, opt=opt,
                      step=int(head["step"]))
