"""Expected-sensor-trace models: per-channel scalar primitives that share the
motion primitive's canonical system, and deviation features against them.

Each channel of a nominal recording is encoded as a second-order attractor
with the same forcing structure as a position primitive but with a static
goal (no goal evolution), so the expected trace is phase-aligned with the
motion by construction.
"""

from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalParams, PhaseKernelBank
from .errors import DataError
from .primitives import (
    PositionPrimitive,
    PositionTrajectory,
    fit_position_primitive,
    moving_average,
    position_unroll,
)


@dataclass
class SensorTraceSet:
    """One recording: T x K matrix of electrode values on a uniform grid."""

    t: np.ndarray
    values: np.ndarray
    setting: float = 0.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.t.size:
            raise DataError("trace length does not match timestamps")
        if self.t.size < 2:
            raise DataError("trace needs at least 2 samples")
        if not np.all(np.isfinite(self.values)):
            raise DataError("trace contains non-finite values")

    @property
    def n_channels(self):
        return self.values.shape[1]

    def __len__(self):
        return self.t.size

    def resample(self, t_new):
        """Linear interpolation onto a new time grid (clamped at the ends)."""
        t_new = np.asarray(t_new, dtype=float)
        out = np.empty((t_new.size, self.n_channels))
        for j in range(self.n_channels):
            out[:, j] = np.interp(t_new, self.t, self.values[:, j])
        return SensorTraceSet(t_new, out, self.setting)


@dataclass
class ExpectedTraceModel:
    """Per-channel scalar primitives plus the mean initial values.

    `duration` is the executed span the trials covered; the primitive's tau
    may be longer when the motion primitives run stretched canonics.
    """

    primitive: PositionPrimitive   # K-dimensional, static goal
    starts: np.ndarray             # (K,)
    duration: float

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=float)
        if self.starts.size != self.primitive.n_dims:
            raise DataError("start vector does not match channel count")
        if self.duration <= 0.0:
            raise DataError("duration must be positive")

    @property
    def n_channels(self):
        return self.primitive.n_dims

    def unroll(self, dt, duration_factor=None):
        """Expected trace matrix on the shared phase grid."""
        if duration_factor is None:
            duration_factor = self.duration / self.primitive.tau
        traj = position_unroll(self.primitive, self.starts, dt=dt,
                               duration_factor=duration_factor)
        return traj.pos


def fit_expected_traces(trials, params, bank, tau_scale=None):
    """Fit one scalar primitive per channel on pooled nominal trials.

    All trials must already be resampled to the primitive's step grid (equal
    length and channel count).  `params`/`bank` are the motion primitive's
    canonical parameters and kernel bank, which the trace model shares.
    """
    if not trials:
        raise DataError("need at least one nominal trial")
    n = len(trials[0])
    k = trials[0].n_channels
    for tr in trials[1:]:
        if len(tr) != n or tr.n_channels != k:
            raise DataError("trials disagree in length or channel count")
    if not isinstance(params, CanonicalParams) or not isinstance(bank, PhaseKernelBank):
        raise DataError("expected the motion primitive's canonical params and bank")
    # electrode noise differentiates badly; pre-smooth the values before the
    # rate estimation so the regression targets track the underlying trace
    window = max(5, n // 15)
    demos = [PositionTrajectory.from_positions(tr.t, moving_average(tr.values, window))
             for tr in trials]
    if tau_scale is None:
        tau_scale = params.tau / demos[0].duration
    prim = fit_position_primitive(demos, bank=bank, tau_scale=tau_scale,
                                  goal_evolution=False)
    starts = np.mean([tr.values[0] for tr in trials], axis=0)
    return ExpectedTraceModel(primitive=prim, starts=starts,
                              duration=demos[0].duration)


def deviation(actual, expected, dt=None):
    """Elementwise actual - expected, phase-indexed.

    `expected` may be an ExpectedTraceModel (unrolled here on the same grid)
    or a precomputed T x K matrix.
    """
    if isinstance(actual, SensorTraceSet):
        values = actual.values
        if dt is None:
            dt = actual.t[1] - actual.t[0]
    else:
        values = np.atleast_2d(np.asarray(actual, dtype=float))
    if isinstance(expected, ExpectedTraceModel):
        if dt is None:
            raise DataError("dt required to unroll the expected-trace model")
        expected = expected.unroll(dt)
    expected = np.atleast_2d(np.asarray(expected, dtype=float))
    if expected.shape != values.shape:
        raise DataError(
            f"length mismatch: actual {values.shape} vs expected {expected.shape}")
    return values - expected
