"""Second-order phase dynamics shared by all DOFs of one primitive, and the
radial-basis kernels evaluated on the phase variable.

The phase starts at (p, u) = (1, 0) and both variables decay to 0 under

    tau * du/dt = alpha * (beta * (0 - p) - u)
    tau * dp/dt = u

with beta = alpha/4 (critical damping), integrated by explicit Euler with
derivatives evaluated on the current state.  Note u is nonpositive along the
trajectory: p decays from 1, so tau*dp/dt = u <= 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_ALPHA = 25.0
# default Euler step is tau/1000; tests verify against a 10x finer rollout
DEFAULT_STEPS_PER_TAU = 1000


@dataclass(frozen=True)
class CanonicalParams:
    """Gains and time scale of the phase system; beta is pinned to alpha/4."""

    tau: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.alpha <= 0.0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")

    @property
    def beta(self):
        return self.alpha / 4.0

    @property
    def default_dt(self):
        return self.tau / DEFAULT_STEPS_PER_TAU


@dataclass(frozen=True)
class PhaseState:
    p: float = 1.0
    u: float = 0.0


def canonical_step(state, params, dt):
    """One explicit-Euler step of the phase dynamics."""
    if dt <= 0.0:
        raise ValidationError(f"step must be positive, got {dt}")
    du = params.alpha * (params.beta * (0.0 - state.p) - state.u) / params.tau
    dp = state.u / params.tau
    return PhaseState(state.p + dt * dp, state.u + dt * du)


def phase_rollout(params, dt, n_steps):
    """Phase trajectory sampled at steps 0..n_steps inclusive.

    Returns (p, u) arrays of length n_steps + 1 starting from (1, 0).
    """
    p = np.empty(n_steps + 1)
    u = np.empty(n_steps + 1)
    state = PhaseState()
    for k in range(n_steps):
        p[k], u[k] = state.p, state.u
        state = canonical_step(state, params, dt)
    p[n_steps], u[n_steps] = state.p, state.u
    return p, u


@dataclass(frozen=True)
class PhaseKernelBank:
    """Gaussian kernels psi_i(p) = exp(-h_i (p - c_i)^2) on the phase axis."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        widths = np.asarray(self.widths, dtype=float)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        if centers.ndim != 1 or centers.shape != widths.shape:
            raise ValidationError("centers and widths must be matching 1-d arrays")
        if centers.size < 2:
            raise ValidationError(f"need at least 2 kernels, got {centers.size}")
        if not np.all(np.diff(centers) < 0.0):
            raise ValidationError("kernel centers must be strictly decreasing")
        if not np.all(widths > 0.0):
            raise ValidationError("kernel widths must be positive")

    @property
    def n(self):
        return self.centers.size


def phase_kernels(p, bank):
    """Raw kernel activations at phase p (strictly positive, <= 1)."""
    return np.exp(-bank.widths * (p - bank.centers) ** 2)


def normalized_kernels(p, bank):
    """Activations normalized to sum to one."""
    psi = phase_kernels(p, bank)
    return psi / psi.sum()


def kernel_matrix(p, bank):
    """Normalized activations for a whole phase vector, shape (len(p), N).

    Rows whose activations all underflow (phase far outside the kernel span)
    come back as NaN for the caller to detect.
    """
    p = np.asarray(p, dtype=float)
    psi = np.exp(-bank.widths[None, :] * (p[:, None] - bank.centers[None, :]) ** 2)
    with np.errstate(invalid="ignore"):
        return psi / psi.sum(axis=1, keepdims=True)


def default_kernel_bank(n, params, span=None, dt=None):
    """Kernels centered at the phase values of n equally spaced time points.

    The points cover [0, span] (span defaults to tau) mapped through the
    phase dynamics, so centers are equally spaced in time rather than in p.
    Widths follow the 1/(2 dc^2) overlap rule with the last width copied
    from its neighbor.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 kernels, got {n}")
    if span is None:
        span = params.tau
    if not 0.0 < span <= params.tau:
        raise ValidationError(f"kernel span must lie in (0, tau], got {span}")
    if dt is None:
        dt = params.default_dt
    steps = max(1, int(round(span / dt)))
    p, _ = phase_rollout(params, dt, steps)
    times = np.linspace(0.0, steps * dt, steps + 1)
    centers = np.interp(np.linspace(0.0, span, n), times, p)
    dc = np.diff(centers)
    widths = 1.0 / (2.0 * dc**2)
    widths = np.append(widths, widths[-1])
    return PhaseKernelBank(centers, widths)
