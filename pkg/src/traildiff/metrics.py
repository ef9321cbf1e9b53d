"""Sample-set metrics: trajectory diversity, keyframe hit rates, a
speed/displacement coherence score, and a diagonal-covariance Frechet
distance over fixed random linear features.

The Frechet distance here deliberately avoids the matrix square root of
the full-covariance form; report it as "frechet (diag)" when printing so
the numbers are not mistaken for encoder-based FID.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .seq import ABS, POS_X, POS_Z, RAW, SPEED, MotionSeq, TrajSeq

REPORT_MAGIC = "metric-report"
REPORT_VERSION = 1

FEATURE_DIM = 32
_ENCODER_KEY = 2468


def _locations(sample):
    """One sample -> (2, M) ground-plane rows as float64."""
    if isinstance(sample, TrajSeq):
        sample.require(frame=ABS, space=RAW)
        return sample.ground().astype(np.float64, copy=False)
    if isinstance(sample, MotionSeq):
        sample.require(frame=ABS, space=RAW)
        tc = sample.traj_channels
        return sample.data[[tc[1], tc[2]]].astype(np.float64, copy=False)
    a = np.asarray(sample, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] not in (2, 3):
        raise InvalidArgument(
            f"sample must be a TrajSeq, MotionSeq or a (2, M)/(3, M) array, "
            f"got {a.shape}")
    return a[-2:] if a.shape[0] == 3 else a


def _collect(samples):
    """Sample list or stacked array -> (S, 2, M) locations."""
    if isinstance(samples, np.ndarray) and samples.ndim == 3:
        samples = list(samples)
    rows = [_locations(s) for s in samples]
    if not rows:
        raise InvalidArgument("need at least one sample")
    lengths = {r.shape[1] for r in rows}
    if len(lengths) != 1:
        raise InvalidArgument(f"samples disagree on length: {sorted(lengths)}")
    return np.stack(rows)


def trajectory_diversity(samples):
    """RMS distance of each sample's location at each frame from the
    per-frame mean location across the sample set."""
    locs = _collect(samples)
    if locs.shape[0] < 2:
        raise InvalidArgument("diversity needs at least 2 samples")
    center = locs.mean(axis=0)
    d2 = ((locs - center) ** 2).sum(axis=1)  # (S, M) squared distances
    return float(np.sqrt(d2.mean()))


def keyframe_errors(samples, keys, threshold=0.5):
    """(traj_error, loc_error, avg_error) against keyframe locations.

    traj_error: fraction of samples with any key missed by more than
    threshold. loc_error: fraction of (sample, key) pairs missed.
    avg_error: mean distance over all (sample, key) pairs, reached or not.
    """
    if threshold <= 0:
        raise InvalidArgument("threshold must be > 0")
    if len(keys.frames) == 0:
        raise InvalidArgument("keyframe set is empty")
    locs = _collect(samples)
    keys.check_range(locs.shape[2])
    at_keys = locs[:, :, keys.frames]                  # (S, 2, K)
    target = keys.locations.T[None]                    # (1, 2, K)
    dist = np.sqrt(((at_keys - target) ** 2).sum(axis=1))  # (S, K)
    missed = dist > threshold
    traj_error = float(missed.any(axis=1).mean())
    loc_error = float(missed.mean())
    avg_error = float(dist.mean())
    return traj_error, loc_error, avg_error


def slip_score(seq):
    """Mean |speed channel - actual per-frame displacement|.

    Speeds follow the outgoing convention (entry i is the step from frame
    i to i+1), so the last frame has no displacement to compare against.
    """
    if not isinstance(seq, MotionSeq):
        raise InvalidArgument("slip_score needs a MotionSeq")
    seq.require(frame=ABS, space=RAW)
    d = seq.data
    if d.shape[0] <= SPEED or d.shape[1] < 2:
        raise InvalidArgument(
            f"need a speed channel and >= 2 frames, got shape {d.shape}")
    step = np.linalg.norm(np.diff(d[[POS_X, POS_Z]].astype(np.float64),
                                  axis=1), axis=0)
    return float(np.mean(np.abs(d[SPEED, :-1] - step)))


def encode_features(batch, dim=FEATURE_DIM):
    """(S, ...) samples -> (S, dim) via a fixed random linear map.

    The matrix is keyed by the flattened input width, so any two batches
    of equal-shaped samples land in the same feature space.
    """
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim < 2:
        raise InvalidArgument("batch must be (S, ...) with S samples")
    flat = a.reshape(a.shape[0], -1)
    n_in = flat.shape[1]
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((_ENCODER_KEY, n_in, dim))))
    w = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)
    return flat @ w


def gaussian_frechet(feats_a, feats_b):
    """Frechet distance between diagonal Gaussians fit to two feature sets:
    d^2 = |mu_a - mu_b|^2 + sum_j (sigma_aj + sigma_bj - 2 sqrt(sigma_aj sigma_bj)).
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise InvalidArgument("features must be (S, dim) arrays")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InvalidArgument("need at least 2 samples per side")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgument(
            f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    var_a = a.var(axis=0, ddof=1)
    var_b = b.var(axis=0, ddof=1)
    # (sqrt(va) - sqrt(vb))^2 equals va + vb - 2 sqrt(va vb) but cannot
    # go negative in floating point
    d2 = ((mu_a - mu_b) ** 2).sum() + ((np.sqrt(var_a) - np.sqrt(var_b)) ** 2).sum()
    return float(d2)


_REPORT_FIELDS = ("traj_diversity", "traj_error", "loc_error", "avg_error",
                  "slip_score", "frechet", "sample_count")


@dataclass(frozen=True)
class MetricReport:
    """A flat bundle of the suite's numbers for one configuration."""

    traj_diversity: float
    traj_error: float
    loc_error: float
    avg_error: float
    slip_score: float
    frechet: float
    sample_count: int

    def __post_init__(self):
        for name in _REPORT_FIELDS[:-1]:
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidArgument(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        for name in ("traj_error", "loc_error"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(
                    f"{name} must be in [0, 1], got {getattr(self, name)!r}")
        n = self.sample_count
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise InvalidArgument(
                f"sample_count must be a non-negative integer, got {n!r}")
        object.__setattr__(self, "sample_count", int(n))

    def to_record(self):
        lines = [f"{REPORT_MAGIC} {REPORT_VERSION}"]
        for f in _REPORT_FIELDS:
            lines.append(f"{f}={getattr(self, f)!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_record(text):
        lines = [ln.strip() for ln in text.splitlines()
                 if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines or lines[0] != f"{REPORT_MAGIC} {REPORT_VERSION}":
            raise InvalidArgument("not a metric report")
        vals = {}
        for ln in lines[1:]:
            name, sep, raw = ln.partition("=")
            if not sep or name not in _REPORT_FIELDS:
                raise InvalidArgument(f"bad record line: {ln!r}")
            vals[name] = int(raw) if name == "sample_count" else float(raw)
        missing = [f for f in _REPORT_FIELDS if f not in vals]
        if missing:
            raise InvalidArgument(f"record missing fields: {missing}")
        return MetricReport(**vals)
