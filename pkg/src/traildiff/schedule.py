"""Diffusion noise schedules and every coefficient the samplers consume.

A schedule is the pair (beta, alpha_bar) on t = 0..T with alpha_bar[0] = 1
and alpha_bar[t] = prod_{s<=t}(1 - beta[s]). beta[0] is a placeholder zero
so arrays index naturally by timestep. All derived quantities (posterior
mean coefficients, their epsilon-form equivalents, the posterior variance)
come from here and nowhere else.

The posterior q(x_{t-1} | x_t, x_0) is Gaussian with

    mean = a * x_0 + b * x_t
    a    = sqrt(alpha_bar[t-1]) * beta[t] / (1 - alpha_bar[t])
    b    = sqrt(1 - beta[t]) * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])
    var  = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t]

(the "fixed small" variance). Substituting x_0 = (x_t - sqrt(1-ab_t) e)
/ sqrt(ab_t) gives the epsilon form mean = c * x_t - d * e with
c = a / sqrt(alpha_bar[t]) + b and d = a * sqrt(1 - alpha_bar[t])
/ sqrt(alpha_bar[t]).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

COSINE_OFFSET = 0.008
BETA_CLIP = 0.999


def _as_step(t):
    """Coerce a timestep to int, rejecting anything non-integral."""
    if isinstance(t, (bool, np.bool_)):
        raise InvalidArgument(f"timestep must be an integer, got {t!r}")
    if isinstance(t, (int, np.integer)):
        return int(t)
    raise InvalidArgument(f"timestep must be an integer, got {type(t).__name__}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable (beta, alpha_bar) pair plus coefficient accessors.

    Arrays have length T+1: index 0 is the clean boundary (beta 0,
    alpha_bar 1), indices 1..T are the diffusion steps.
    """

    kind: str
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float | None = field(default=None)
    beta_end: float | None = field(default=None)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.T < 1:
            raise InvalidArgument(f"T must be >= 1, got {self.T}")
        if beta.shape != (self.T + 1,) or ab.shape != (self.T + 1,):
            raise InvalidArgument(
                f"beta/alpha_bar must have shape ({self.T + 1},), "
                f"got {beta.shape} and {ab.shape}"
            )
        if beta[0] != 0.0 or ab[0] != 1.0:
            raise InvalidArgument("index 0 must hold beta=0, alpha_bar=1")
        if not (np.all(beta[1:] > 0.0) and np.all(beta[1:] < 1.0)):
            raise InvalidArgument("beta[t] must lie in (0, 1) for t >= 1")
        if not np.all(np.diff(ab) < 0.0):
            raise InvalidArgument("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)
        beta.setflags(write=False)
        ab.setflags(write=False)

    # -- scalar coefficient accessors -------------------------------------

    def _check_t(self, t, low=1):
        t = _as_step(t)
        if not (low <= t <= self.T):
            raise InvalidArgument(f"t={t} outside {low}..{self.T}")
        return t

    def posterior_coefficients(self, t):
        """(a, b, sigma2) of q(x_{t-1} | x_t, x_0) for 1 <= t <= T."""
        t = self._check_t(t)
        ab_t = self.alpha_bar[t]
        ab_prev = self.alpha_bar[t - 1]
        bt = self.beta[t]
        a = math.sqrt(ab_prev) * bt / (1.0 - ab_t)
        b = math.sqrt(1.0 - bt) * (1.0 - ab_prev) / (1.0 - ab_t)
        sigma2 = (1.0 - ab_prev) / (1.0 - ab_t) * bt
        return a, b, sigma2

    def epsilon_coefficients(self, t):
        """(c, d) with posterior mean = c*x_t - d*eps, same t range.

        Computed by substituting the x_0-from-eps identity into the
        (a, b) form; the closed forms 1/sqrt(1-beta) and
        beta/(sqrt(1-beta) sqrt(1-alpha_bar)) are checked against this
        in the tests, not used here.
        """
        t = self._check_t(t)
        a, b, _ = self.posterior_coefficients(t)
        sab = math.sqrt(self.alpha_bar[t])
        c = a / sab + b
        d = a * math.sqrt(1.0 - self.alpha_bar[t]) / sab
        return c, d

    # -- array forms over x ------------------------------------------------

    def _gather(self, values, t, x_ndim):
        """values[t] shaped to broadcast against an x of x_ndim dims."""
        if isinstance(t, np.ndarray):
            if not np.issubdtype(t.dtype, np.integer):
                raise InvalidArgument("timestep array must be integer dtype")
            if t.min() < 0 or t.max() > self.T:
                raise InvalidArgument("timestep array outside 0..T")
            g = values[t]
            return g.reshape(g.shape + (1,) * (x_ndim - g.ndim))
        return values[self._check_t(t, low=0)]

    def q_sample(self, x0, t, noise):
        """Draw x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) noise.

        t may be a scalar in 0..T (0 returns x0: the clean boundary is
        allowed even though diffusion steps start at 1) or an integer
        array matching x0's leading axis.
        """
        x0 = np.asarray(x0)
        noise = np.asarray(noise)
        if x0.shape != noise.shape:
            raise InvalidArgument(
                f"noise shape {noise.shape} != x0 shape {x0.shape}"
            )
        ab = self._gather(self.alpha_bar, t, x0.ndim)
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise

    def x0_from_eps(self, x_t, t, eps):
        """Invert the forward draw: (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)."""
        x_t = np.asarray(x_t)
        eps = np.asarray(eps)
        if x_t.shape != eps.shape:
            raise InvalidArgument(
                f"eps shape {eps.shape} != x_t shape {x_t.shape}"
            )
        ab = self._gather(self.alpha_bar, t, x_t.ndim)
        return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)

    def eps_from_x0(self, x_t, t, x0):
        """The noise that maps x0 to x_t under the forward draw."""
        x_t = np.asarray(x_t)
        x0 = np.asarray(x0)
        if x_t.shape != x0.shape:
            raise InvalidArgument(
                f"x0 shape {x0.shape} != x_t shape {x_t.shape}"
            )
        ab = self._gather(self.alpha_bar, t, x_t.ndim)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)

    def posterior_mean(self, x0, x_t, t):
        a, b, _ = self.posterior_coefficients(t)
        return a * np.asarray(x0) + b * np.asarray(x_t)

    def posterior_mean_from_eps(self, x_t, eps, t):
        c, d = self.epsilon_coefficients(t)
        return c * np.asarray(x_t) - d * np.asarray(eps)

    # -- analysis ----------------------------------------------------------

    def contribution_shares(self):
        """(T, 3) array of (t, a/(a+b), d/(c+d)) over t = 1..T.

        The first share is how much of the posterior mean the clean
        prediction controls; the second is the noise prediction's share
        of the epsilon-form mean.
        """
        rows = np.empty((self.T, 3))
        for i, t in enumerate(range(1, self.T + 1)):
            a, b, _ = self.posterior_coefficients(t)
            c, d = self.epsilon_coefficients(t)
            rows[i] = (t, a / (a + b), d / (c + d))
        return rows

    def coefficient_table(self):
        """(T, 8) array: t, beta, alpha_bar, a, b, c, d, sigma2 per step."""
        rows = np.empty((self.T, 8))
        for i, t in enumerate(range(1, self.T + 1)):
            a, b, s2 = self.posterior_coefficients(t)
            c, d = self.epsilon_coefficients(t)
            rows[i] = (t, self.beta[t], self.alpha_bar[t], a, b, c, d, s2)
        return rows

    # -- serialization -----------------------------------------------------

    def descriptor(self):
        """Plain dict that rebuilds this schedule (for checkpoints)."""
        out = {"kind": self.kind, "T": self.T}
        if self.kind == "linear":
            out["beta_start"] = self.beta_start
            out["beta_end"] = self.beta_end
        return out

    @staticmethod
    def from_descriptor(desc):
        return build_schedule(
            desc["kind"],
            desc["T"],
            beta_start=desc.get("beta_start"),
            beta_end=desc.get("beta_end"),
        )


def build_schedule(kind, T, *, beta_start=None, beta_end=None):
    """Construct a schedule of the given kind.

    cosine: f(t) = cos^2(((t/T + 0.008)/1.008) * pi/2), raw cumulative
    alpha_bar[t] = f(t)/f(0), per-step beta from consecutive ratios
    clipped to <= 0.999, then alpha_bar recomputed as the cumulative
    product so the type's defining identity holds exactly.

    linear: betas linearly spaced over caller-supplied endpoints. There
    is no canonical endpoint pair for this family, so both are required.
    """
    T = _as_step(T)
    if T < 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    if kind == "cosine":
        if beta_start is not None or beta_end is not None:
            raise InvalidArgument("cosine kind takes no beta endpoints")
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * math.pi / 2.0) ** 2
        ab_raw = f / f[0]
        beta = np.zeros(T + 1)
        beta[1:] = np.minimum(1.0 - ab_raw[1:] / ab_raw[:-1], BETA_CLIP)
    elif kind == "linear":
        if beta_start is None or beta_end is None:
            raise InvalidArgument("linear kind requires beta_start and beta_end")
        if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
            raise InvalidArgument("beta endpoints must lie in (0, 1)")
        beta = np.zeros(T + 1)
        beta[1:] = np.linspace(beta_start, beta_end, T)
    else:
        raise InvalidArgument(f"unknown schedule kind {kind!r}")

    alpha_bar = np.ones(T + 1)
    alpha_bar[1:] = np.cumprod(1.0 - beta[1:])
    return NoiseSchedule(
        kind=kind,
        T=T,
        beta=beta,
        alpha_bar=alpha_bar,
        beta_start=beta_start,
        beta_end=beta_end,
    )
