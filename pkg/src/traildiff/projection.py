"""Random emphasis projection over motion channels.

A projector mixes every channel through a random invertible matrix
A = A' B, where A' has i.i.d. standard normal entries and the diagonal
B scales the three trajectory columns by c >= 1. Dividing by
sqrt(N - 3 + 3 c^2) restores unit variance for unit-variance inputs,
so a denoiser can be trained directly in the projected space while the
trajectory carries a 3c^2 / (N - 3 + 3c^2) share of it.

Only (N, traj_indices, c, seed) are ever persisted; the matrix is
regenerated from the seed, which keeps checkpoints small and the
reconstruction bit-stable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionFailure, InvalidArgument
from .seq import NORM, PROJ, TRAJ_CHANNELS

COND_LIMIT = 1e8
MAX_RESAMPLES = 10


def _check_nc(N, c):
    if not isinstance(N, (int, np.integer)) or N < 4:
        raise InvalidArgument(f"N must be an integer >= 4, got {N!r}")
    if c < 1.0:
        raise InvalidArgument(f"emphasis scale c must be >= 1, got {c!r}")


def relative_importance(N, c):
    """Share of projected-space variance carried by the trajectory.

    c*c is grouped first so that c = recommended_c(N) lands on 0.5
    exactly: squaring the correctly rounded sqrt recovers (N-3)/3.
    """
    _check_nc(N, c)
    k = 3.0 * (c * c)
    return k / (N - 3 + k)


def recommended_c(N):
    """The c giving the trajectory a 50% share: sqrt((N-3)/3)."""
    _check_nc(N, 1.0)
    return math.sqrt((N - 3) / 3.0)


def _check_traj(N, traj_indices):
    traj = tuple(int(i) for i in traj_indices)
    if len(set(traj)) != 3 or len(traj) != 3:
        raise InvalidArgument("traj_indices must be 3 distinct channels")
    if min(traj) < 0 or max(traj) >= N:
        raise InvalidArgument(f"traj_indices out of range for N={N}")
    return traj


@dataclass(frozen=True, eq=False)
class EmphasisProjector:
    N: int
    traj_indices: tuple
    c: float
    seed: int  # None marks the identity test projector
    A: np.ndarray
    A_inv: np.ndarray
    norm: float

    def __post_init__(self):
        self.A.setflags(write=False)
        self.A_inv.setflags(write=False)

    @property
    def matrix(self):
        """The full forward map norm * A applied to channel columns."""
        return self.norm * self.A

    @property
    def inverse_matrix(self):
        return self.A_inv / self.norm

    def apply(self, data):
        """norm * A @ data on a raw (..., N, M) array, dtype preserved."""
        if data.shape[-2] != self.N:
            raise InvalidArgument(
                f"expected {self.N} channels, got {data.shape[-2]}")
        return np.asarray(self.matrix @ data, dtype=data.dtype)

    def apply_inv(self, data):
        if data.shape[-2] != self.N:
            raise InvalidArgument(
                f"expected {self.N} channels, got {data.shape[-2]}")
        return np.asarray(self.inverse_matrix @ data, dtype=data.dtype)

    def project(self, x):
        """Normalized MotionSeq -> projected MotionSeq."""
        x.require(space=NORM)
        return x.with_data(self.apply(x.data), space=PROJ)

    def unproject(self, xp):
        """Projected MotionSeq -> normalized MotionSeq."""
        xp.require(space=PROJ)
        return xp.with_data(self.apply_inv(xp.data), space=NORM)

    def descriptor(self):
        return {"N": self.N, "traj_indices": list(self.traj_indices),
                "c": self.c, "seed": self.seed}

    @staticmethod
    def from_descriptor(desc):
        if desc["seed"] is None:
            return identity_projector(desc["N"], desc["traj_indices"])
        return build_projector(desc["N"], desc["traj_indices"], desc["c"],
                               desc["seed"])


def build_projector(N, traj_indices=TRAJ_CHANNELS, c=None, seed=0):
    """Draw A' until well-conditioned (at most 10 resamples), scale the
    trajectory columns by c, and cache the exact inverse.

    c defaults to recommended_c(N). Deterministic per seed: regeneration
    replays the same draw sequence, resamples included.
    """
    if c is None:
        c = recommended_c(N)
    _check_nc(N, c)
    traj = _check_traj(N, traj_indices)
    c = float(c)

    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(1 + MAX_RESAMPLES):
        A = rng.standard_normal((N, N))
        A[:, traj] *= c
        if np.linalg.cond(A) <= COND_LIMIT:
            break
    else:
        raise ConstructionFailure(
            f"projection matrix still ill-conditioned (> {COND_LIMIT:.0e}) "
            f"after {MAX_RESAMPLES} resamples")

    A_inv = np.linalg.solve(A, np.eye(N))
    norm = 1.0 / math.sqrt(N - 3 + 3.0 * c * c)
    return EmphasisProjector(N=N, traj_indices=traj, c=c, seed=seed,
                             A=A, A_inv=A_inv, norm=norm)


def identity_projector(N, traj_indices=TRAJ_CHANNELS):
    """A do-nothing projector (A = I, norm = 1) for plumbing tests."""
    traj = _check_traj(N, traj_indices)
    eye = np.eye(N)
    return EmphasisProjector(N=N, traj_indices=traj, c=1.0, seed=None,
                             A=eye, A_inv=eye.copy(), norm=1.0)
