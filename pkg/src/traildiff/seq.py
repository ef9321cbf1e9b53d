"""Sequence containers and the channel layout shared across the package.

A motion sequence is an (N, M) float matrix: N feature channels, M frames.
Channels 0..2 are the root trajectory (heading rotation, ground x, ground z);
everything above is pose-like local features. Two independent tags track what
the numbers currently mean:

  frame: "relative"  channels 0..2 hold per-frame deltas (heading change and
                     a displacement expressed in the previous frame's heading)
         "absolute"  channels 0..2 hold world heading and world position

  space: "raw"        world units
         "normalized" per-channel z-scored with training-set statistics
         "projected"  normalized, then multiplied by an emphasis projection

Operations that care (normalization, projection, slip scoring, goals) call
`require` instead of guessing.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument, InvalidState

REL = "relative"
ABS = "absolute"
RAW = "raw"
NORM = "normalized"
PROJ = "projected"

_FRAMES = (REL, ABS)
_SPACES = (RAW, NORM, PROJ)

# channel indices of the synthetic layout (data.py) and of TrajSeq rows
ROT = 0
POS_X = 1
POS_Z = 2
SPEED = 3
GAIT_SIN = 4
GAIT_COS = 5

TRAJ_CHANNELS = (ROT, POS_X, POS_Z)
GROUND_CHANNELS = (POS_X, POS_Z)


def _check_tags(frame, space):
    if frame not in _FRAMES:
        raise InvalidArgument(f"unknown frame tag {frame!r}")
    if space not in _SPACES:
        raise InvalidArgument(f"unknown space tag {space!r}")


@dataclass(frozen=True)
class MotionSeq:
    """An (N, M) feature matrix plus representation tags.

    `traj_channels` designates which rows form the root trajectory; the
    synthetic dataset always uses (0, 1, 2) but the projector and guidance
    code read it from here rather than assuming.
    """

    data: np.ndarray
    frame: str = ABS
    space: str = RAW
    traj_channels: tuple = TRAJ_CHANNELS

    def __post_init__(self):
        _check_tags(self.frame, self.space)
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise InvalidArgument(f"MotionSeq data must be 2-D, got {d.shape}")
        if not np.issubdtype(d.dtype, np.floating):
            d = d.astype(np.float64)
        object.__setattr__(self, "data", d)
        tc = tuple(int(i) for i in self.traj_channels)
        if any(i < 0 or i >= d.shape[0] for i in tc):
            raise InvalidArgument(f"traj_channels {tc} out of range for N={d.shape[0]}")
        object.__setattr__(self, "traj_channels", tc)

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    def require(self, frame=None, space=None):
        """Assert representation tags; returns self so calls chain."""
        if frame is not None and self.frame != frame:
            raise InvalidState(f"need frame={frame!r}, have {self.frame!r}")
        if space is not None and self.space != space:
            raise InvalidState(f"need space={space!r}, have {self.space!r}")
        return self

    def with_data(self, data, frame=None, space=None):
        """Same tags (unless overridden), new numbers."""
        out = replace(self, data=data)
        if frame is not None or space is not None:
            out = replace(
                out,
                frame=frame if frame is not None else out.frame,
                space=space if space is not None else out.space,
            )
        return out

    def trajectory(self):
        """The (3, M) trajectory rows as a TrajSeq with matching tags."""
        if self.space == PROJ:
            raise InvalidState("projected channels are mixed; unproject first")
        rows = self.data[list(self.traj_channels)]
        return TrajSeq(rows, frame=self.frame, space=self.space)


@dataclass(frozen=True)
class TrajSeq:
    """A (3, M) root trajectory: rows (rot, x, z).

    Trajectories are never projected (projection mixes pose into every
    channel), so `space` here is only raw or normalized.
    """

    data: np.ndarray
    frame: str = ABS
    space: str = RAW

    def __post_init__(self):
        _check_tags(self.frame, self.space)
        if self.space == PROJ:
            raise InvalidArgument("TrajSeq cannot be projected")
        d = np.asarray(self.data)
        if d.ndim != 2 or d.shape[0] != 3:
            raise InvalidArgument(f"TrajSeq data must be (3, M), got {d.shape}")
        if not np.issubdtype(d.dtype, np.floating):
            d = d.astype(np.float64)
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self):
        return self.data.shape[1]

    def require(self, frame=None, space=None):
        if frame is not None and self.frame != frame:
            raise InvalidState(f"need frame={frame!r}, have {self.frame!r}")
        if space is not None and self.space != space:
            raise InvalidState(f"need space={space!r}, have {self.space!r}")
        return self

    def with_data(self, data, frame=None, space=None):
        out = replace(self, data=data)
        if frame is not None or space is not None:
            out = replace(
                out,
                frame=frame if frame is not None else out.frame,
                space=space if space is not None else out.space,
            )
        return out

    def ground(self):
        """The (2, M) ground-location rows (x, z)."""
        return self.data[[POS_X, POS_Z]]
