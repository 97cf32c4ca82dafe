"""Dynamic movement primitives: quaternion transformation/goal dynamics on
SO(3), the mirrored position formulation, forcing-term regression from
demonstrations, unrolling, and zero-velocity-crossing segmentation.

Orientation transformation system (per rotation axis, vector form):

    tau^2 dw/dt = alpha * (beta * 2 log(Qg * Q^-1) - tau * w) + f + C
    Q      <- integrated by so3.integrate
    tau wg  = alpha_g * 2 log(QG * Qg^-1)        (goal evolution)

with alpha = 25, beta = alpha/4 (critically damped), alpha_g = alpha/2.
The position formulation replaces 2*log by subtraction and quaternion
integration by vector addition; its goal evolution is linear first order.

Goals can be resolved in "absolute" mode (the fitted goal as-is) or in
"relative" mode (the fitted start-to-goal offset re-anchored to the unroll's
actual start), which keeps sequenced primitives continuous when a previous
stage ends away from its nominal terminal state.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .canonical import (
    CanonicalParams,
    PhaseKernelBank,
    PhaseState,
    canonical_step,
    default_kernel_bank,
    kernel_matrix,
    normalized_kernels,
    phase_rollout,
)
from .errors import DataError, NumericalError, SegmentationError, ValidationError

ALPHA_DEFAULT = 25.0
RIDGE_LAMBDA = 1e-8
SMOOTH_WINDOW = 5


# ---------------------------------------------------------------------------
# trajectories

def moving_average(x, window=SMOOTH_WINDOW):
    """Columnwise moving average with edge padding, same length as input."""
    x = np.asarray(x, dtype=float)
    half = window // 2
    padded = np.pad(x, ((half, window - 1 - half), (0, 0)), mode="edge")
    kernel = np.ones(window) / window
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        out[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    return out


def _check_time_grid(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise DataError("trajectory needs at least 2 samples")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-12):
        raise DataError("trajectory timestamps must be uniform")
    return t, float(dt[0])


def angular_rates_from_quaternions(t, quats, smooth=True):
    """Estimate (omega, omega_dot) from a quaternion sequence.

    omega_k = 2 log(Q_{k+1} * Q_k^-1) / dt (last value repeated), smoothed
    with a moving average; omega_dot by central differences of the smoothed
    omega, smoothed again.
    """
    t, dt = _check_time_grid(t)
    n = len(t)
    omega = np.empty((n, 3))
    for k in range(n - 1):
        inc = so3.compose(quats[k + 1], so3.conjugate(quats[k]))
        omega[k] = 2.0 * so3.log_map(inc) / dt
    omega[-1] = omega[-2]
    if smooth:
        omega = moving_average(omega)
    omega_dot = np.gradient(omega, dt, axis=0)
    if smooth:
        omega_dot = moving_average(omega_dot)
    return omega, omega_dot


@dataclass
class OrientationTrajectory:
    """Uniformly sampled (Q, omega, omega_dot) sequence; quaternions canonical."""

    t: np.ndarray
    quat: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray

    def __post_init__(self):
        self.t, self._dt = _check_time_grid(self.t)
        self.quat = np.asarray(self.quat, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.omega_dot = np.asarray(self.omega_dot, dtype=float)
        n = len(self.t)
        if self.quat.shape != (n, 4) or self.omega.shape != (n, 3) or self.omega_dot.shape != (n, 3):
            raise DataError("orientation trajectory arrays have inconsistent shapes")

    @classmethod
    def from_quaternions(cls, t, quats, smooth=True):
        quats = np.array([so3.canonicalize(q) for q in np.asarray(quats, dtype=float)])
        omega, omega_dot = angular_rates_from_quaternions(t, quats, smooth=smooth)
        return cls(np.asarray(t, dtype=float), quats, omega, omega_dot)

    @property
    def dt(self):
        return self._dt

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def __len__(self):
        return len(self.t)


@dataclass
class PositionTrajectory:
    """Uniformly sampled (x, v, a) sequence, any number of linear DOFs."""

    t: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    def __post_init__(self):
        self.t, self._dt = _check_time_grid(self.t)
        self.pos = np.atleast_2d(np.asarray(self.pos, dtype=float))
        self.vel = np.asarray(self.vel, dtype=float)
        self.acc = np.asarray(self.acc, dtype=float)
        if self.pos.shape[0] != len(self.t):
            raise DataError("position trajectory arrays have inconsistent shapes")
        if self.vel.shape != self.pos.shape or self.acc.shape != self.pos.shape:
            raise DataError("position trajectory arrays have inconsistent shapes")

    @classmethod
    def from_positions(cls, t, pos, smooth=True):
        t = np.asarray(t, dtype=float)
        pos = np.asarray(pos, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        _, dt = _check_time_grid(t)
        vel = np.gradient(pos, dt, axis=0)
        if smooth:
            vel = moving_average(vel)
        acc = np.gradient(vel, dt, axis=0)
        if smooth:
            acc = moving_average(acc)
        return cls(t, pos, vel, acc)

    @property
    def dt(self):
        return self._dt

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    @property
    def n_dims(self):
        return self.pos.shape[1]

    def __len__(self):
        return len(self.t)


# ---------------------------------------------------------------------------
# primitive parameter containers

@dataclass
class QuaternionPrimitive:
    weights: np.ndarray                  # (N, 3), forcing weights per axis
    goal: np.ndarray                     # fitted steady-state orientation
    start: np.ndarray                    # fitted mean start (anchors relative goals)
    tau: float
    bank: PhaseKernelBank
    alpha: float = ALPHA_DEFAULT
    alpha_goal: float = ALPHA_DEFAULT / 2.0
    goal_mode: str = "absolute"          # "absolute" | "relative"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.bank.n, 3):
            raise ValidationError("weight matrix must be (n_kernels, 3)")
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("weights must be finite")
        if self.alpha <= 0.0 or self.alpha_goal <= 0.0 or self.tau <= 0.0:
            raise ValidationError("gains and tau must be positive")
        if self.goal_mode not in ("absolute", "relative"):
            raise ValidationError(f"unknown goal mode {self.goal_mode!r}")
        self.goal = so3.canonicalize(self.goal)
        self.start = so3.canonicalize(self.start)

    @property
    def beta(self):
        return self.alpha / 4.0

    @property
    def canonical(self):
        return CanonicalParams(tau=self.tau)

    def resolve_goal(self, start):
        """Steady-state goal for an unroll starting at `start`."""
        if self.goal_mode == "absolute":
            return self.goal
        offset = so3.compose(self.goal, so3.conjugate(self.start))
        return so3.compose(offset, so3.canonicalize(start))


@dataclass
class PositionPrimitive:
    weights: np.ndarray                  # (N, D)
    goal: np.ndarray                     # (D,)
    start: np.ndarray                    # (D,)
    tau: float
    bank: PhaseKernelBank
    alpha: float = ALPHA_DEFAULT
    alpha_goal: float = ALPHA_DEFAULT / 2.0
    goal_mode: str = "absolute"
    goal_evolution: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.goal = np.atleast_1d(np.asarray(self.goal, dtype=float))
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        if self.weights.shape != (self.bank.n, self.goal.size):
            raise ValidationError("weight matrix must be (n_kernels, n_dims)")
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("weights must be finite")
        if self.alpha <= 0.0 or self.alpha_goal <= 0.0 or self.tau <= 0.0:
            raise ValidationError("gains and tau must be positive")
        if self.goal_mode not in ("absolute", "relative"):
            raise ValidationError(f"unknown goal mode {self.goal_mode!r}")

    @property
    def beta(self):
        return self.alpha / 4.0

    @property
    def n_dims(self):
        return self.goal.size

    @property
    def canonical(self):
        return CanonicalParams(tau=self.tau)

    def resolve_goal(self, start):
        if self.goal_mode == "absolute":
            return self.goal.copy()
        return np.asarray(start, dtype=float) + (self.goal - self.start)


@dataclass
class PrimitiveState:
    quat: np.ndarray
    omega: np.ndarray
    goal: np.ndarray
    phase: PhaseState


@dataclass
class PositionState:
    pos: np.ndarray
    vel: np.ndarray
    goal: np.ndarray
    phase: PhaseState


# ---------------------------------------------------------------------------
# quaternion dynamics

def forcing_term(p, u, prim):
    """Normalized-kernel mixture of the weights, gated by the phase velocity."""
    return (prim.weights.T @ normalized_kernels(p, prim.bank)) * u


def goal_step(goal, steady_goal, prim, dt):
    """Advance the evolving goal one step toward the steady-state goal."""
    omega_g = prim.alpha_goal * 2.0 * so3.log_map(
        so3.compose(steady_goal, so3.conjugate(goal))) / prim.tau
    return so3.integrate(goal, omega_g, dt)


def transformation_step(state, forcing, coupling, prim, dt, steady_goal=None):
    """One explicit-Euler step of the full orientation state.

    Returns (next_state, omega_dot) with omega_dot evaluated on the incoming
    state, so a recorded (Q, omega, omega_dot) triple satisfies the
    transformation equation exactly at every sample.
    """
    if steady_goal is None:
        steady_goal = prim.goal
    err = 2.0 * so3.log_map(so3.compose(state.goal, so3.conjugate(state.quat)))
    omega_dot = (prim.alpha * (prim.beta * err - prim.tau * state.omega)
                 + np.asarray(forcing, dtype=float)
                 + np.asarray(coupling, dtype=float)) / prim.tau**2
    nxt = PrimitiveState(
        quat=so3.integrate(state.quat, state.omega, dt),
        omega=state.omega + dt * omega_dot,
        goal=goal_step(state.goal, steady_goal, prim, dt),
        phase=canonical_step(state.phase, prim.canonical, dt),
    )
    return nxt, omega_dot


def unroll(prim, start, coupling_source=None, dt=None, duration_factor=1.0,
           start_omega=None):
    """Integrate the primitive from `start`, recording a full trajectory.

    coupling_source is called once per step as f(PhaseState, t) -> 3-vector;
    the goal state starts at the start orientation and evolves toward the
    resolved steady-state goal.
    """
    if dt is None:
        dt = prim.canonical.default_dt
    if dt <= 0.0:
        raise ValidationError(f"step must be positive, got {dt}")
    steps = math.ceil(duration_factor * prim.tau / dt - 1e-9)
    start = so3.canonicalize(start)
    steady_goal = prim.resolve_goal(start)
    state = PrimitiveState(
        quat=start,
        omega=np.zeros(3) if start_omega is None else np.asarray(start_omega, dtype=float).copy(),
        goal=start.copy(),
        phase=PhaseState(),
    )
    n = steps + 1
    t = np.arange(n) * dt
    quats = np.empty((n, 4))
    omegas = np.empty((n, 3))
    omega_dots = np.empty((n, 3))
    for k in range(steps):
        f = forcing_term(state.phase.p, state.phase.u, prim)
        c = np.zeros(3) if coupling_source is None else np.asarray(
            coupling_source(state.phase, t[k]), dtype=float)
        quats[k] = state.quat
        omegas[k] = state.omega
        state, omega_dots[k] = transformation_step(state, f, c, prim, dt, steady_goal)
    # terminal sample, with the acceleration it would command
    f = forcing_term(state.phase.p, state.phase.u, prim)
    c = np.zeros(3) if coupling_source is None else np.asarray(
        coupling_source(state.phase, t[-1]), dtype=float)
    err = 2.0 * so3.log_map(so3.compose(state.goal, so3.conjugate(state.quat)))
    quats[-1] = state.quat
    omegas[-1] = state.omega
    omega_dots[-1] = (prim.alpha * (prim.beta * err - prim.tau * state.omega) + f + c) / prim.tau**2
    return OrientationTrajectory(t, quats, omegas, omega_dots)


def extract_forcing_target(demo, goal, tau, alpha=ALPHA_DEFAULT,
                           alpha_goal=ALPHA_DEFAULT / 2.0):
    """Per-sample forcing targets of a demonstration.

    f_target = -alpha*(beta * 2 log(Qg * Q^-1) - tau*omega) + tau^2*omega_dot
    with the evolving goal replayed from the demo's first orientation toward
    `goal`, exactly as an unroll would evolve it.
    """
    if len(demo) < 3:
        raise DataError("demonstration too short to extract forcing targets")
    beta = alpha / 4.0
    dt = demo.dt
    goal = so3.canonicalize(goal)
    g = demo.quat[0].copy()
    out = np.empty((len(demo), 3))
    for k in range(len(demo)):
        err = 2.0 * so3.log_map(so3.compose(g, so3.conjugate(demo.quat[k])))
        out[k] = (-alpha * (beta * err - tau * demo.omega[k])
                  + tau**2 * demo.omega_dot[k])
        omega_g = alpha_goal * 2.0 * so3.log_map(so3.compose(goal, so3.conjugate(g))) / tau
        g = so3.integrate(g, omega_g, dt)
    return out


def _quaternion_log_mean(quats, reference):
    """Average orientation as exp(mean log offsets) around a reference."""
    offsets = np.array([so3.log_map(so3.compose(q, so3.conjugate(reference))) for q in quats])
    return so3.compose(so3.exp_map(offsets.mean(axis=0)), reference)


def _ridge_fit(design, targets):
    """Duplication-invariant ridge regression (Gram matrix normalized by rows)."""
    rows = design.shape[0]
    if not np.all(np.isfinite(design)):
        raise NumericalError("degenerate phase coverage: phase integration "
                             "unstable at this sample rate")
    s = np.linalg.svd(design, compute_uv=False)
    if s[0] <= 0.0 or s[-1] < 1e-10 * s[0]:
        raise NumericalError("degenerate phase coverage: singular forcing regression")
    gram = design.T @ design / rows + RIDGE_LAMBDA * np.eye(design.shape[1])
    return np.linalg.solve(gram, design.T @ targets / rows)


def _fit_phase_design(n_samples, dt, tau, bank):
    params = CanonicalParams(tau=tau)
    p, u = phase_rollout(params, dt, n_samples - 1)
    return kernel_matrix(p, bank) * u[:, None], p, u


def fit_quaternion_primitive(demos, n_kernels=25, bank=None, tau_scale=1.0,
                             alpha=ALPHA_DEFAULT, goal_mode="absolute"):
    """Least-squares fit of the forcing weights to pooled demonstrations.

    All demos must share length and sample rate; tau = tau_scale * duration.
    The goal is the log-mean of the terminal orientations (around the first
    demo's terminal value), the stored start the log-mean of initial ones.
    """
    if not demos:
        raise DataError("need at least one demonstration")
    n = len(demos[0])
    dt = demos[0].dt
    for d in demos[1:]:
        if len(d) != n or not np.isclose(d.dt, dt, rtol=1e-6):
            raise DataError("demonstrations must share length and sample rate")
    tau = tau_scale * demos[0].duration
    bank = bank or default_kernel_bank(n_kernels, CanonicalParams(tau=tau),
                                       span=demos[0].duration)
    goal = _quaternion_log_mean([d.quat[-1] for d in demos], demos[0].quat[-1])
    start = _quaternion_log_mean([d.quat[0] for d in demos], demos[0].quat[0])
    design_one, _, _ = _fit_phase_design(n, dt, tau, bank)
    design = np.vstack([design_one] * len(demos))
    targets = np.vstack([extract_forcing_target(d, goal, tau, alpha=alpha) for d in demos])
    weights = _ridge_fit(design, targets)
    return QuaternionPrimitive(weights=weights, goal=goal, start=start, tau=tau,
                               bank=bank, alpha=alpha, goal_mode=goal_mode)


# ---------------------------------------------------------------------------
# position dynamics (linear mirror of the quaternion system)

def position_forcing_term(p, u, prim):
    return (prim.weights.T @ normalized_kernels(p, prim.bank)) * u


def position_goal_step(goal, steady_goal, prim, dt):
    """First-order linear goal evolution; identity when evolution is disabled."""
    if not prim.goal_evolution:
        return np.asarray(steady_goal, dtype=float).copy()
    return goal + dt * prim.alpha_goal * (steady_goal - goal) / prim.tau


def position_transformation_step(state, forcing, coupling, prim, dt, steady_goal=None):
    if steady_goal is None:
        steady_goal = prim.goal
    acc = (prim.alpha * (prim.beta * (state.goal - state.pos) - prim.tau * state.vel)
           + np.asarray(forcing, dtype=float)
           + np.asarray(coupling, dtype=float)) / prim.tau**2
    nxt = PositionState(
        pos=state.pos + dt * state.vel,
        vel=state.vel + dt * acc,
        goal=position_goal_step(state.goal, steady_goal, prim, dt),
        phase=canonical_step(state.phase, prim.canonical, dt),
    )
    return nxt, acc


def position_unroll(prim, start, coupling_source=None, dt=None,
                    duration_factor=1.0, start_vel=None):
    if dt is None:
        dt = prim.canonical.default_dt
    if dt <= 0.0:
        raise ValidationError(f"step must be positive, got {dt}")
    steps = math.ceil(duration_factor * prim.tau / dt - 1e-9)
    start = np.atleast_1d(np.asarray(start, dtype=float))
    steady_goal = prim.resolve_goal(start)
    state = PositionState(
        pos=start.copy(),
        vel=np.zeros_like(start) if start_vel is None else np.asarray(start_vel, dtype=float).copy(),
        goal=start.copy() if prim.goal_evolution else steady_goal.copy(),
        phase=PhaseState(),
    )
    n = steps + 1
    t = np.arange(n) * dt
    pos = np.empty((n, prim.n_dims))
    vel = np.empty((n, prim.n_dims))
    acc = np.empty((n, prim.n_dims))
    for k in range(steps):
        f = position_forcing_term(state.phase.p, state.phase.u, prim)
        c = np.zeros(prim.n_dims) if coupling_source is None else np.asarray(
            coupling_source(state.phase, t[k]), dtype=float)
        pos[k] = state.pos
        vel[k] = state.vel
        state, acc[k] = position_transformation_step(state, f, c, prim, dt, steady_goal)
    f = position_forcing_term(state.phase.p, state.phase.u, prim)
    c = np.zeros(prim.n_dims) if coupling_source is None else np.asarray(
        coupling_source(state.phase, t[-1]), dtype=float)
    pos[-1] = state.pos
    vel[-1] = state.vel
    acc[-1] = (prim.alpha * (prim.beta * (state.goal - state.pos) - prim.tau * state.vel)
               + f + c) / prim.tau**2
    return PositionTrajectory(t, pos, vel, acc)


def extract_position_forcing_target(demo, goal, tau, alpha=ALPHA_DEFAULT,
                                    alpha_goal=ALPHA_DEFAULT / 2.0, goal_evolution=True):
    if len(demo) < 3:
        raise DataError("demonstration too short to extract forcing targets")
    beta = alpha / 4.0
    dt = demo.dt
    goal = np.atleast_1d(np.asarray(goal, dtype=float))
    g = goal.copy() if not goal_evolution else demo.pos[0].copy()
    out = np.empty_like(demo.pos)
    for k in range(len(demo)):
        out[k] = (-alpha * (beta * (g - demo.pos[k]) - tau * demo.vel[k])
                  + tau**2 * demo.acc[k])
        if goal_evolution:
            g = g + dt * alpha_goal * (goal - g) / tau
    return out


def fit_position_primitive(demos, n_kernels=25, bank=None, tau_scale=1.0,
                           alpha=ALPHA_DEFAULT, goal_mode="absolute",
                           goal_evolution=True):
    if not demos:
        raise DataError("need at least one demonstration")
    n = len(demos[0])
    dt = demos[0].dt
    dims = demos[0].n_dims
    for d in demos[1:]:
        if len(d) != n or d.n_dims != dims or not np.isclose(d.dt, dt, rtol=1e-6):
            raise DataError("demonstrations must share shape and sample rate")
    tau = tau_scale * demos[0].duration
    bank = bank or default_kernel_bank(n_kernels, CanonicalParams(tau=tau),
                                       span=demos[0].duration)
    goal = np.mean([d.pos[-1] for d in demos], axis=0)
    start = np.mean([d.pos[0] for d in demos], axis=0)
    design_one, _, _ = _fit_phase_design(n, dt, tau, bank)
    design = np.vstack([design_one] * len(demos))
    targets = np.vstack([
        extract_position_forcing_target(d, goal, tau, alpha=alpha,
                                        goal_evolution=goal_evolution)
        for d in demos])
    weights = _ridge_fit(design, targets)
    return PositionPrimitive(weights=weights, goal=goal, start=start, tau=tau,
                             bank=bank, alpha=alpha, goal_mode=goal_mode,
                             goal_evolution=goal_evolution)


# ---------------------------------------------------------------------------
# segmentation

@dataclass(frozen=True)
class Segmentation:
    """Sample indices splitting a three-stage trajectory.

    Stage 1 is [0, end_descend], stage 2 [end_descend, start_slide], stage 3
    [start_slide, end]; boundary samples are shared between adjacent stages.
    """

    end_descend: int
    start_slide: int

    def bounds(self, n_samples):
        return [(0, self.end_descend), (self.end_descend, self.start_slide),
                (self.start_slide, n_samples - 1)]


def segment_zvc(traj, descend_axis=2, slide_axis=1, velocity_threshold=0.005):
    """Three-stage segmentation by zero velocity crossings.

    The end of the descend stage is where the descend-axis velocity first
    returns to zero after its (negative) peak; the start of the slide stage
    is where the slide-axis velocity last leaves zero before its (positive)
    peak.  Raw sign crossings are refined to the edge of the low-speed
    plateau: the boundary is the sample nearest the peak whose |v| has
    dropped below `velocity_threshold` times the peak speed, which absorbs
    the flat tails of smooth velocity profiles and differentiation noise.
    """
    vz = traj.vel[:, descend_axis]
    vy = traj.vel[:, slide_axis]

    iz = int(np.argmin(vz))
    if vz[iz] >= 0.0:
        raise SegmentationError("no descend phase: z velocity never negative")
    quiet = np.nonzero(np.abs(vz[iz:]) <= velocity_threshold * abs(vz[iz]))[0]
    if quiet.size == 0:
        raise SegmentationError("no zero crossing of z velocity after descend")
    end_descend = iz + int(quiet[0])

    iy = int(np.argmax(vy))
    if vy[iy] <= 0.0:
        raise SegmentationError("no slide phase: y velocity never positive")
    quiet = np.nonzero(np.abs(vy[:iy + 1]) <= velocity_threshold * vy[iy])[0]
    if quiet.size == 0:
        raise SegmentationError("no zero crossing of y velocity before slide")
    start_slide = int(quiet[-1])

    if not end_descend <= start_slide:
        raise SegmentationError(
            f"inconsistent boundaries: descend ends at {end_descend}, "
            f"slide starts at {start_slide}")
    return Segmentation(end_descend=end_descend, start_slide=start_slide)
