"""Synthetic locomotion dataset: 2-D root trajectories with coherent pose
channels, plus representation conversions and normalization.

Each sequence is an (N, M) matrix in the layout from seq.py. The trajectory
rows (heading, x, z) are exact; every channel from speed upward is a
deterministic function of that trajectory (speed, gait phase integrated from
speed, harmonics of phase mixed with speed and turn rate) plus Gaussian
observation noise. That construction is what makes coherence measurable:
the slip score compares the speed channel against the actual per-frame
displacement, so pose channels glued onto a foreign trajectory stand out
by an order of magnitude.

Conventions shared with the converters below: frame i's deltas describe the
motion from frame i to frame i+1, expressed in frame i's heading. Integration
anchors frame 0 at heading 0, origin. The last frame's deltas leave the
sequence and cannot be recovered from absolute coordinates; abs_to_rel pads
them by repeating the previous frame (constant velocity), so round trips are
exact on sequences whose trailing deltas repeat, which generated data and
any rel_to_abs output satisfy.

Sequence i of a dataset draws from SeedSequence((seed, i)), so generation
is order-independent and reproducible per sequence.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionFailure, InvalidArgument
from .seq import ABS, NORM, RAW, REL, MotionSeq

LABELS = ("straight", "left-turn", "right-turn", "circle", "zigzag", "s-curve")

DATASET_MAGIC = b"GMDD"
DATASET_VERSION = 1

# gait cadence: phase advance per frame at rest plus a speed-linked term
_PHASE_BASE = 0.6
_PHASE_GAIN = 0.9


@dataclass(frozen=True)
class DatasetSpec:
    """Generation parameters; the header of the container file."""

    n_per_label: int
    n_frames: int = 64
    n_channels: int = 17
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_per_label < 1:
            raise InvalidArgument("n_per_label must be >= 1")
        if self.n_frames < 2:
            raise InvalidArgument("n_frames must be >= 2")
        if self.n_channels < 6:
            raise InvalidArgument("n_channels must be >= 6 (traj + speed + gait)")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        if self.seed < 0:
            raise InvalidArgument("seed must be >= 0")

    @property
    def n_sequences(self):
        return self.n_per_label * len(LABELS)

    def descriptor(self):
        return {
            "n_per_label": self.n_per_label,
            "n_frames": self.n_frames,
            "n_channels": self.n_channels,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @staticmethod
    def from_descriptor(d):
        return DatasetSpec(**{k: d[k] for k in
                              ("n_per_label", "n_frames", "n_channels",
                               "noise_sigma", "seed")})


@dataclass(frozen=True)
class Dataset:
    """Generated sequences: (n, N, M) float32, absolute frame, raw units."""

    data: np.ndarray
    labels: np.ndarray
    spec: DatasetSpec

    def __post_init__(self):
        if self.data.ndim != 3 or self.labels.shape != (self.data.shape[0],):
            raise InvalidArgument("need (n, N, M) data and (n,) labels")

    def __len__(self):
        return self.data.shape[0]

    def seq(self, i):
        return MotionSeq(self.data[i], frame=ABS, space=RAW)

    def label_name(self, i):
        return LABELS[int(self.labels[i])]


def _heading_program(label, M, rng):
    """Per-frame heading (radians, unwrapped) for one sequence."""
    theta0 = rng.uniform(-np.pi, np.pi)
    t = np.arange(M)
    if label == 0:  # straight
        return np.full(M, theta0)
    if label in (1, 2):  # left-turn / right-turn
        total = rng.uniform(np.pi / 3, np.pi) * (1.0 if label == 1 else -1.0)
        return theta0 + total * t / (M - 1)
    if label == 3:  # circle: one full loop, either direction
        total = 2 * np.pi * rng.uniform(0.97, 1.03) * rng.choice([-1.0, 1.0])
        return theta0 + total * t / (M - 1)
    if label == 4:  # zigzag: straight legs, alternating sharp corners
        leg = int(rng.integers(8, 17))
        bend = rng.uniform(np.pi / 4, np.pi / 2)
        omega = np.zeros(M)
        sign = 1.0
        for corner in range(leg, M, leg):
            omega[corner] = sign * bend
            sign = -sign
        return theta0 + np.cumsum(omega)
    # s-curve: heading swings out and back, one smooth period
    swing = rng.uniform(np.pi / 3, 2 * np.pi / 3) * rng.choice([-1.0, 1.0])
    return theta0 + swing * (1 - np.cos(2 * np.pi * t / (M - 1))) / 2


def _speed_program(M, rng):
    # wide between-sequence spread: coherence tests hinge on two unrelated
    # speed profiles being far apart on average
    base = rng.uniform(0.1, 2.6)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(M)
    return base * (1 + 0.25 * np.sin(2 * np.pi * freq * t / (M - 1) + phase))


def _pose_channels(N, theta, speed, phase, rng, sigma):
    """Channels 3..N-1 as functions of trajectory + phase, plus noise."""
    M = theta.shape[0]
    omega = np.empty(M)
    omega[:-1] = np.diff(theta)
    omega[-1] = omega[-2]
    rows = [speed, np.sin(phase), np.cos(phase)]
    for k in range(6, N):
        h = 1 + (k - 6) % 3
        psi = 2 * np.pi * k / 11
        amp = 0.5 + 0.8 * (0.5 + 0.5 * ((k * 7) % 11) / 11)
        turn = (-1.0) ** k * (0.3 + 0.4 * ((k * 5) % 7) / 7)
        rows.append(np.sin(h * phase + psi) * (amp * (0.4 + speed)) + 3 * turn * omega)
    pose = np.stack(rows)
    return pose + sigma * rng.standard_normal(pose.shape)


def generate_sequence(spec, index):
    """One (N, M) float64 sequence plus its label id."""
    label = index % len(LABELS)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index)))
    M, N = spec.n_frames, spec.n_channels

    theta = _heading_program(label, M, rng)
    speed = _speed_program(M, rng)
    pos = np.zeros((2, M))
    step = speed[:-1] * np.array([np.cos(theta[:-1]), np.sin(theta[:-1])])
    pos[:, 1:] = np.cumsum(step, axis=1)
    # gait phase integrates cadence; a pure function of the speed profile
    phase = np.concatenate([[0.0], np.cumsum(_PHASE_BASE + _PHASE_GAIN * speed[:-1])])

    out = np.empty((N, M))
    out[0] = theta
    out[1:3] = pos
    out[3:] = _pose_channels(N, theta, speed, phase, rng, spec.noise_sigma)
    return out, label


def generate_dataset(spec):
    data = np.empty((spec.n_sequences, spec.n_channels, spec.n_frames),
                    dtype=np.float32)
    labels = np.empty(spec.n_sequences, dtype=np.int64)
    for i in range(spec.n_sequences):
        seq, lab = generate_sequence(spec, i)
        data[i] = seq.astype(np.float32)
        labels[i] = lab
    return Dataset(data=data, labels=labels, spec=spec)


def split_dataset(dataset, val_fraction=0.1):
    """Stratified train/validation index split, deterministic.

    Takes the tail of each label's index list; sequence content is already
    randomized per index, so the tail is as good as a shuffle.
    """
    if not 0 < val_fraction < 1:
        raise InvalidArgument("val_fraction must be in (0, 1)")
    train, val = [], []
    for lab in range(len(LABELS)):
        idx = np.flatnonzero(dataset.labels == lab)
        n_val = int(round(val_fraction * idx.size)) if idx.size > 1 else 0
        cut = idx.size - n_val
        train.extend(idx[:cut])
        val.extend(idx[cut:])
    return np.sort(np.array(train, dtype=np.intp)), np.sort(np.array(val, dtype=np.intp))


# -- representation conversions ------------------------------------------------

def _rot(theta):
    """(2, 2, M) rotation matrices taking local (fwd, side) to world."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rel_to_abs(seq):
    """Integrate per-frame deltas into world heading and position."""
    seq.require(frame=REL)
    d = seq.data
    M = d.shape[1]
    theta = np.zeros(M, dtype=np.float64)
    theta[1:] = np.cumsum(d[0, :-1])
    R = _rot(theta[:-1])
    step = np.einsum("ijm,jm->im", R, d[1:3, :-1].astype(np.float64))
    pos = np.zeros((2, M))
    pos[:, 1:] = np.cumsum(step, axis=1)
    out = d.copy()
    out[0] = theta.astype(d.dtype)
    out[1:3] = pos.astype(d.dtype)
    return seq.with_data(out, frame=ABS)


def abs_to_rel(seq):
    """Differentiate world heading/position into local per-frame deltas.

    The last frame has no successor; its deltas repeat the previous
    frame's, so rel_to_abs(abs_to_rel(x)) == x for any x anchored at
    (heading 0, origin).
    """
    seq.require(frame=ABS)
    d = seq.data
    M = d.shape[1]
    theta = d[0].astype(np.float64)
    out = d.copy()
    if M == 1:
        out[0:3] = 0
        return seq.with_data(out, frame=REL)
    drot = np.diff(theta)
    world = np.diff(d[1:3].astype(np.float64), axis=1)
    Rt = _rot(theta[:-1]).transpose(1, 0, 2)  # inverse rotation
    local = np.einsum("ijm,jm->im", Rt, world)
    out[0, :-1] = drot.astype(d.dtype)
    out[0, -1] = out[0, -2]
    out[1:3, :-1] = local.astype(d.dtype)
    out[1:3, -1] = out[1:3, -2]
    return seq.with_data(out, frame=REL)


# -- normalization ---------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Per-channel z-scoring statistics, fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise InvalidArgument("mean and std must be matching 1-D arrays")
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            bad = np.flatnonzero(~(std > 0) | ~np.isfinite(std))
            raise ConstructionFailure(f"degenerate channels (std <= 0): {bad.tolist()}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        mean.setflags(write=False)
        std.setflags(write=False)

    @property
    def n_channels(self):
        return self.mean.shape[0]

    def descriptor(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_descriptor(d):
        return NormStats(np.array(d["mean"]), np.array(d["std"]))


def fit_norm(data):
    """NormStats over an (n, N, M) stack (statistics pool frames and
    sequences per channel)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidArgument(f"expected (n, N, M) training stack, got {arr.shape}")
    flat = arr.transpose(1, 0, 2).reshape(arr.shape[1], -1)
    return NormStats(mean=flat.mean(axis=1), std=flat.std(axis=1))


def _affine(stats, x, forward):
    arr = np.asarray(x)
    if arr.ndim < 2 or arr.shape[-2] != stats.n_channels:
        raise InvalidArgument(
            f"expected (..., {stats.n_channels}, M) channels, got {arr.shape}")
    mu = stats.mean[:, None]
    sd = stats.std[:, None]
    out = (arr - mu) / sd if forward else arr * sd + mu
    return out.astype(arr.dtype, copy=False)


def apply_norm(stats, seq):
    """Raw -> normalized; accepts MotionSeq or a bare channel stack."""
    if isinstance(seq, MotionSeq):
        seq.require(space=RAW)
        return seq.with_data(_affine(stats, seq.data, True), space=NORM)
    return _affine(stats, seq, True)


def invert_norm(stats, seq):
    """Normalized -> raw; exact inverse of apply_norm up to rounding."""
    if isinstance(seq, MotionSeq):
        seq.require(space=NORM)
        return seq.with_data(_affine(stats, seq.data, False), space=RAW)
    return _affine(stats, seq, False)


# -- container file --------------------------------------------------------------

def save_dataset(path, dataset):
    """Single-file container: magic, version, JSON header, then per
    sequence a label id and the float32 little-endian matrix."""
    header = json.dumps({"spec": dataset.spec.descriptor(),
                         "labels": list(LABELS),
                         "n_sequences": len(dataset)}).encode()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(header)))
        fh.write(header)
        for i in range(len(dataset)):
            fh.write(struct.pack("<I", int(dataset.labels[i])))
            fh.write(np.ascontiguousarray(dataset.data[i], dtype="<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise InvalidArgument(f"{path}: not a dataset container")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != DATASET_VERSION:
        raise InvalidArgument(f"{path}: unsupported dataset version {version}")
    try:
        header = json.loads(raw[12:12 + hlen].decode())
        spec = DatasetSpec.from_descriptor(header["spec"])
        n = int(header["n_sequences"])
    except (ValueError, KeyError) as e:
        raise InvalidArgument(f"{path}: corrupt header") from e
    N, M = spec.n_channels, spec.n_frames
    rec = 4 + 4 * N * M
    body = raw[12 + hlen:]
    if len(body) != n * rec:
        raise InvalidArgument(
            f"{path}: expected {n * rec} payload bytes, found {len(body)}")
    data = np.empty((n, N, M), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        off = i * rec
        labels[i] = struct.unpack_from("<I", body, off)[0]
        data[i] = np.frombuffer(body, dtype="<f4", count=N * M,
                                offset=off + 4).reshape(N, M)
    if np.any(labels >= len(LABELS)):
        raise InvalidArgument(f"{path}: label id out of range")
    return Dataset(data=data, labels=labels, spec=spec)
