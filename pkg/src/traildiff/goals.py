"""Goal functions over ground trajectories and the 2-D obstacle world.

A goal G maps the ground channels (x, z) of a trajectory to a scalar
cost with an analytic (sub)gradient; guided sampling differentiates
through it via an autodiff custom op. Everything here works in raw
world units on absolute coordinates; the guidance layer owns the
mapping in and out of normalized model space.

Arrays are accepted batched: value() sums the per-sequence costs of a
(..., 2, M) stack (each sequence's gradient is untouched by the others)
and grad() returns the matching (..., 2, M) array.

The obstacle world plus optional keyframes round-trips through a small
versioned text format::

    traildiff-world 1
    circle <cx> <cz> <radius>
    box <x0> <z0> <x1> <z1>
    key <frame> <x> <z>

with '#' comments; keyframe records must come in increasing frame
order.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument
from .seq import ABS, RAW, TrajSeq

WORLD_MAGIC = "traildiff-world"
WORLD_VERSION = 1


def _ground(z):
    """Coerce a TrajSeq (absolute, raw) or (..., 2, M) array to float64."""
    if isinstance(z, TrajSeq):
        z.require(frame=ABS, space=RAW)
        return z.ground().astype(np.float64, copy=False)
    g = np.asarray(z, dtype=np.float64)
    if g.ndim < 2 or g.shape[-2] != 2:
        raise InvalidArgument(f"expected ground channels (..., 2, M), got {g.shape}")
    return g


def _check_p(p):
    if p not in (1, 2):
        raise InvalidArgument(f"p must be 1 or 2, got {p!r}")
    return p


def _pnorm_and_grad(diff, p):
    """Per-frame p-norm summed over frames; subgradient 0 at kinks."""
    if p == 1:
        return float(np.abs(diff).sum()), np.sign(diff)
    norms = np.sqrt((diff * diff).sum(axis=-2, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(norms > 0.0, diff / np.where(norms > 0, norms, 1.0), 0.0)
    return float(norms.sum()), g


# -- keyframes ---------------------------------------------------------------

@dataclass(frozen=True)
class KeyframeSet:
    """Sparse (frame, ground location) targets, strictly increasing."""

    frames: np.ndarray   # (K,) int
    locations: np.ndarray  # (K, 2) float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.intp)
        locs = np.asarray(self.locations, dtype=np.float64)
        if frames.ndim != 1 or locs.shape != (frames.size, 2):
            raise InvalidArgument("keyframes need (K,) frames and (K, 2) locations")
        if frames.size and (np.any(frames < 0) or np.any(np.diff(frames) <= 0)):
            raise InvalidArgument("keyframe indices must be strictly increasing and >= 0")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "locations", locs)
        frames.setflags(write=False)
        locs.setflags(write=False)

    def __len__(self):
        return self.frames.size

    @staticmethod
    def from_pairs(pairs):
        pairs = list(pairs)
        return KeyframeSet(np.array([f for f, _ in pairs], dtype=np.intp),
                           np.array([list(loc) for _, loc in pairs], dtype=np.float64)
                           if pairs else np.zeros((0, 2)))

    def check_range(self, n_frames):
        if self.frames.size and self.frames.max() >= n_frames:
            raise InvalidArgument(
                f"keyframe index {self.frames.max()} outside 0..{n_frames - 1}")

    def mask(self, n_frames):
        """(M,) float mask, 1 at keyed frames."""
        self.check_range(n_frames)
        m = np.zeros(n_frames)
        m[self.frames] = 1.0
        return m


# -- SDF world ---------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidArgument("circle radius must be > 0")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def sdf(self, pts):
        """pts (2, n) -> (values (n,), grads (2, n))."""
        d = pts - np.asarray(self.center)[:, None]
        r = np.sqrt((d * d).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r > 0.0, d / np.where(r > 0, r, 1.0), 0.0)
        return r - self.radius, g


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = (float(self.lo[0]), float(self.lo[1]))
        hi = (float(self.hi[0]), float(self.hi[1]))
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise InvalidArgument("box needs lo < hi on both axes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def sdf(self, pts):
        center = (np.asarray(self.lo) + np.asarray(self.hi))[:, None] / 2.0
        half = (np.asarray(self.hi) - np.asarray(self.lo))[:, None] / 2.0
        rel = pts - center
        q = np.abs(rel) - half
        qp = np.maximum(q, 0.0)
        outside = np.sqrt((qp * qp).sum(axis=0))
        inside = np.minimum(np.max(q, axis=0), 0.0)
        vals = outside + inside

        sgn = np.where(rel >= 0.0, 1.0, -1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            g_out = sgn * qp / np.where(outside > 0, outside, 1.0)
        # Inside (or on the boundary flats): push along the axis of the
        # nearest face.
        axis = np.argmax(q, axis=0)
        g_in = np.zeros_like(pts)
        n = pts.shape[1]
        g_in[axis, np.arange(n)] = sgn[axis, np.arange(n)]
        g = np.where(outside > 0.0, g_out, g_in)
        return vals, g


@dataclass(frozen=True)
class SdfMap:
    """Union (pointwise min) of circle and box obstacles."""

    primitives: tuple = ()

    def __post_init__(self):
        prims = tuple(self.primitives)
        for pr in prims:
            if not isinstance(pr, (Circle, Box)):
                raise InvalidArgument(f"unsupported primitive {type(pr).__name__}")
        object.__setattr__(self, "primitives", prims)

    def evaluate(self, pts):
        """pts (2, n) -> (values (n,), grads (2, n)) of the union."""
        pts = np.asarray(pts, dtype=np.float64)
        if not self.primitives:
            n = pts.shape[1]
            return np.full(n, np.inf), np.zeros((2, n))
        vals = np.empty((len(self.primitives), pts.shape[1]))
        grads = np.empty((len(self.primitives), 2, pts.shape[1]))
        for i, pr in enumerate(self.primitives):
            vals[i], grads[i] = pr.sdf(pts)
        pick = np.argmin(vals, axis=0)
        cols = np.arange(pts.shape[1])
        return vals[pick, cols], grads[pick, :, cols].T


def sdf_eval(sdf_map, point):
    """Signed distance and unit (sub)gradient at one world point."""
    p = np.asarray(point, dtype=np.float64).reshape(2, 1)
    vals, grads = sdf_map.evaluate(p)
    return float(vals[0]), grads[:, 0].copy()


# -- goal functions ----------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryGoal:
    """Sum over frames of the p-norm gap to a reference ground path."""

    ref: np.ndarray  # (2, M)
    p: int = 1

    def __post_init__(self):
        ref = _ground(self.ref)
        if ref.ndim != 2:
            raise InvalidArgument("reference must be a single (2, M) path")
        object.__setattr__(self, "ref", ref)
        _check_p(self.p)

    def value(self, ground):
        return self._both(ground)[0]

    def grad(self, ground):
        return self._both(ground)[1]

    def _both(self, ground):
        g = _ground(ground)
        if g.shape[-1] != self.ref.shape[-1]:
            raise InvalidArgument(
                f"length mismatch: {g.shape[-1]} vs reference {self.ref.shape[-1]}")
        return _pnorm_and_grad(g - self.ref, self.p)


@dataclass(frozen=True)
class KeyframeGoal:
    """Sum over keyed frames of the p-norm gap to the key location."""

    keys: KeyframeSet
    p: int = 1

    def __post_init__(self):
        _check_p(self.p)

    def value(self, ground):
        return self._both(ground)[0]

    def grad(self, ground):
        return self._both(ground)[1]

    def _both(self, ground):
        g = _ground(ground)
        self.keys.check_range(g.shape[-1])
        diff = g[..., self.keys.frames] - self.keys.locations.T
        val, dg = _pnorm_and_grad(diff, self.p)
        full = np.zeros_like(g)
        full[..., self.keys.frames] = dg
        return val, full


@dataclass(frozen=True)
class ObstacleGoal:
    """sum_i -min(SDF(z_i), c_safe): flat beyond the safe distance,
    growing toward and inside obstacles."""

    sdf_map: SdfMap
    c_safe: float

    def __post_init__(self):
        if self.c_safe <= 0:
            raise InvalidArgument("c_safe must be > 0")

    def value(self, ground):
        return self._both(ground)[0]

    def grad(self, ground):
        return self._both(ground)[1]

    def _both(self, ground):
        g = _ground(ground)
        flat = g.reshape(-1, 2, g.shape[-1])
        pts = np.concatenate(list(flat), axis=-1)
        vals, grads = self.sdf_map.evaluate(pts)
        active = vals < self.c_safe  # the clip kink itself carries no gradient
        clipped = np.minimum(vals, self.c_safe)
        gg = np.where(active, -1.0, 0.0) * grads
        return float(-clipped.sum()), gg.reshape(2, flat.shape[0], -1
                                                 ).swapaxes(0, 1).reshape(g.shape)


@dataclass(frozen=True)
class CompositeGoal:
    goals: tuple
    weights: tuple

    def value(self, ground):
        return sum(w * g.value(ground) for g, w in zip(self.goals, self.weights))

    def grad(self, ground):
        out = None
        for g, w in zip(self.goals, self.weights):
            term = w * g.grad(ground)
            out = term if out is None else out + term
        return out


def trajectory_goal(z, z_ref, p=1):
    return TrajectoryGoal(ref=_ground(z_ref), p=p).value(z)


def keyframe_goal(z, keys, p=1):
    return KeyframeGoal(keys=keys, p=p).value(z)


def obstacle_goal(z, sdf_map, c_safe):
    return ObstacleGoal(sdf_map=sdf_map, c_safe=c_safe).value(z)


def composite_goal(goals, weights=None):
    goals = tuple(goals)
    if weights is None:
        weights = (1.0,) * len(goals)
    weights = tuple(float(w) for w in weights)
    if len(weights) != len(goals):
        raise InvalidArgument(
            f"{len(goals)} goals but {len(weights)} weights")
    return CompositeGoal(goals=goals, weights=weights)


def goal_term(goal, x):
    """The goal as a recorded autodiff node over a ground Tensor."""
    return ad.custom_op(
        x,
        lambda d: np.float64(goal.value(d)),
        lambda d, g: float(g) * goal.grad(d),
        name="goal",
    )


# -- world file --------------------------------------------------------------

def save_world(path, sdf_map=None, keys=None):
    lines = [f"{WORLD_MAGIC} {WORLD_VERSION}"]
    for pr in (sdf_map.primitives if sdf_map is not None else ()):
        if isinstance(pr, Circle):
            lines.append(f"circle {pr.center[0]!r} {pr.center[1]!r} {pr.radius!r}")
        else:
            lines.append(f"box {pr.lo[0]!r} {pr.lo[1]!r} {pr.hi[0]!r} {pr.hi[1]!r}")
    if keys is not None:
        for f, (x, z) in zip(keys.frames, keys.locations):
            lines.append(f"key {int(f)} {float(x)!r} {float(z)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_world(path):
    """Parse a world file; returns (SdfMap, KeyframeSet)."""
    with open(path) as fh:
        raw = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in raw if ln]
    if not lines:
        raise InvalidArgument(f"{path}: empty world file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != WORLD_MAGIC:
        raise InvalidArgument(f"{path}: missing '{WORLD_MAGIC} <version>' header")
    if head[1] != str(WORLD_VERSION):
        raise InvalidArgument(f"{path}: unsupported world version {head[1]}")

    prims, pairs = [], []
    for ln in lines[1:]:
        kind, *rest = ln.split()
        try:
            if kind == "circle" and len(rest) == 3:
                cx, cz, r = map(float, rest)
                prims.append(Circle((cx, cz), r))
            elif kind == "box" and len(rest) == 4:
                x0, z0, x1, z1 = map(float, rest)
                prims.append(Box((x0, z0), (x1, z1)))
            elif kind == "key" and len(rest) == 3:
                pairs.append((int(rest[0]), (float(rest[1]), float(rest[2]))))
            else:
                raise InvalidArgument(f"{path}: bad record '{ln}'")
        except ValueError as e:
            raise InvalidArgument(f"{path}: bad record '{ln}'") from e
    return SdfMap(tuple(prims)), KeyframeSet.from_pairs(pairs)
