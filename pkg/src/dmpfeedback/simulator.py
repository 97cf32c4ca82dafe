"""Synthetic tilt-board scraping environment.

Replaces the robot hardware with a fully deterministic surrogate: three-stage
demonstrations (descend in z, reorient to flat contact, slide in y) built
from minimum-jerk profiles, a per-electrode contact model that turns roll
misalignment into tactile deviations, and a closed-loop executor that feeds
those deviations through a trained feedback model back into the quaternion
transformation system.

All rotations in the scene are about the world y axis (the slide direction),
matching the assumption that only the roll orientation needs correction.
Every generated quantity is a pure function of (profile, seed).

The pipeline runs primitives with tau = TAU_SCALE * stage duration and
start-anchored (relative) goals.  With tau equal to the stage duration the
phase velocity u has decayed to ~1e-4 of its peak by the end of a stage, so
a u-modulated feedback model could never hold a correction against the
attractor near stage boundaries; stretching tau keeps u alive through the
executed span while relative goals carry a held correction across stage
hand-offs.  The tau proportionality constant is configurable by design.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .canonical import PhaseState
from .errors import DataError, ValidationError
from .primitives import (
    OrientationTrajectory,
    PositionTrajectory,
    PrimitiveState,
    PositionState,
    forcing_term,
    position_forcing_term,
    position_transformation_step,
    transformation_step,
    unroll,
)
from .sensors import SensorTraceSet

ROLL_AXIS = 1            # world y axis carries roll in this scene
TAU_SCALE = 5.0          # tau = TAU_SCALE * stage duration in the pipeline
# contact onset spans this fraction of stage 2: the expected-trace encoding
# cannot follow signal changes while the phase velocity is still near zero,
# so the onset is kept slow relative to the phase dynamics
CONTACT_RAMP_FRACTION = 0.35
MAX_ROLL_DEG = 20.0


def minimum_jerk(s):
    """Quintic 0->1 profile with zero velocity and acceleration at both ends."""
    s = np.clip(s, 0.0, 1.0)
    return 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5


def bump(s):
    """Smooth 0->0 bump (peak 1 at s=0.5) with zero end velocities."""
    s = np.clip(s, 0.0, 1.0)
    return np.sin(np.pi * s) ** 2


@dataclass(frozen=True)
class BoardSetting:
    roll_deg: float
    pitch_deg: float = 0.0

    def __post_init__(self):
        if abs(self.roll_deg) > MAX_ROLL_DEG:
            raise ValidationError(f"board roll must stay within +-{MAX_ROLL_DEG} deg")
        if self.pitch_deg != 0.0:
            raise ValidationError("pitch is fixed at zero")

    @property
    def roll_rad(self):
        return math.radians(self.roll_deg)


@dataclass(frozen=True)
class SimProfile:
    """Scene and corpus dimensions; `default` mirrors the full experiment,
    `tiny` is a CI-sized variant."""

    name: str
    settings: tuple = (0.0, 2.5, 5.0, 7.5, 10.0)
    demos_per_setting: int = 15
    n_channels: int = 38
    pose_rate: float = 100.0
    tactile_rate: float = 50.0
    durations: tuple = (1.0, 1.0, 1.5)      # seconds per stage
    home_roll_deg: float = 8.0              # approach roll before flattening
    descend_depth: float = 0.25             # m, stage-1 z travel
    slide_length: float = 0.20              # m, stage-3 y travel
    start_pos: tuple = (0.0, 0.0, 0.30)
    jitter: float = 0.05                    # relative amplitude jitter cap
    hold_bump_scale: float = 0.15           # stage-3 refinement bump, x roll
    noise_sigma: float = 0.4
    tau_scale: float = TAU_SCALE

    @property
    def pose_dt(self):
        return 1.0 / self.pose_rate

    def stage_samples(self, k):
        return int(round(self.durations[k] * self.pose_rate))

    @property
    def boundaries(self):
        n1 = self.stage_samples(0)
        n2 = self.stage_samples(1)
        n3 = self.stage_samples(2)
        return n1, n1 + n2, n1 + n2 + n3

    @property
    def n_samples(self):
        return self.boundaries[2] + 1


DEFAULT_PROFILE = SimProfile(name="default")
TINY_PROFILE = SimProfile(
    name="tiny", settings=(0.0, 5.0, 10.0), demos_per_setting=4, n_channels=8,
    pose_rate=50.0, tactile_rate=25.0, durations=(0.8, 0.8, 1.0))

PROFILES = {"default": DEFAULT_PROFILE, "tiny": TINY_PROFILE}


# ---------------------------------------------------------------------------
# contact model

@dataclass
class ContactModel:
    """Per-electrode surrogate for the tactile response.

    deviation_i = S_i . [delta, delta_dot] + tanh_gain_i * tanh(delta)
                  + roll_gain_i * roll_offset + noise
    where delta is the tool-board roll misalignment under contact and
    roll_offset the tool's held roll relative to the nominal plan (the
    absolute-configuration signature the electrodes also see).
    """

    sensitivity: np.ndarray      # (K, 2) for [delta, delta_dot]
    tanh_gain: np.ndarray        # (K,)
    roll_gain: np.ndarray        # (K,)
    baseline_offset: np.ndarray  # (K,) nominal in-contact level
    baseline_amp: np.ndarray     # (K,)
    baseline_freq: np.ndarray    # (K,) cycles over the contact span
    baseline_phase: np.ndarray   # (K,)
    noise_sigma: float
    seed: int

    def __post_init__(self):
        for name in ("sensitivity", "tanh_gain", "roll_gain", "baseline_offset",
                     "baseline_amp", "baseline_freq", "baseline_phase"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.sensitivity.ndim != 2 or self.sensitivity.shape[1] != 2:
            raise ValidationError("sensitivity must be (n_channels, 2)")
        if self.noise_sigma < 0.0:
            raise ValidationError("noise sigma must be nonnegative")

    @property
    def n_channels(self):
        return self.sensitivity.shape[0]

    def response(self, delta, delta_dot, roll_offset):
        """Noise-free deviation field for misalignment/offset histories."""
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        delta_dot = np.atleast_1d(np.asarray(delta_dot, dtype=float))
        roll_offset = np.atleast_1d(np.asarray(roll_offset, dtype=float))
        lin = np.outer(delta, self.sensitivity[:, 0]) + np.outer(delta_dot, self.sensitivity[:, 1])
        return lin + np.outer(np.tanh(delta), self.tanh_gain) + np.outer(roll_offset, self.roll_gain)

    def nominal_profile(self, contact_weight, contact_progress):
        """Fixed per-channel trace shape of the nominal in-contact execution."""
        w = np.atleast_1d(np.asarray(contact_weight, dtype=float))
        s = np.atleast_1d(np.asarray(contact_progress, dtype=float))
        wave = np.sin(2.0 * np.pi * self.baseline_freq[None, :] * s[:, None]
                      + self.baseline_phase[None, :])
        return w[:, None] * (self.baseline_offset[None, :]
                             + self.baseline_amp[None, :] * wave)


def _signed_magnitudes(rng, n, lo_frac, hi_lo, hi_hi, scale):
    """At least 30% of entries in [hi_lo, hi_hi]*scale, rest in [lo_frac, hi_lo]*scale."""
    n_hi = max(1, math.ceil(0.3 * n))
    mags = np.concatenate([
        rng.uniform(hi_lo, hi_hi, size=n_hi),
        rng.uniform(lo_frac, hi_lo, size=n - n_hi),
    ]) * scale
    mags = rng.permutation(mags)
    signs = rng.choice([-1.0, 1.0], size=n)
    return mags * signs


def build_contact_model(dim, seed, noise_sigma=None):
    """Deterministic pseudo-random contact model.

    By construction at least 25% of channels have a misalignment sensitivity
    above half the maximum, so the deviation field always carries a
    learnable signal.
    """
    if dim < 1:
        raise ValidationError("need at least one channel")
    rng = np.random.default_rng((int(seed), 0x5EA5))
    delta_col = _signed_magnitudes(rng, dim, 0.05, 0.6, 1.0, 120.0)
    rate_col = rng.uniform(-30.0, 30.0, size=dim)
    return ContactModel(
        sensitivity=np.column_stack([delta_col, rate_col]),
        tanh_gain=rng.uniform(-40.0, 40.0, size=dim),
        roll_gain=_signed_magnitudes(rng, dim, 0.1, 0.6, 1.0, 120.0),
        baseline_offset=rng.uniform(-10.0, 10.0, size=dim),
        baseline_amp=rng.uniform(5.0, 15.0, size=dim),
        baseline_freq=rng.uniform(0.5, 1.5, size=dim),
        baseline_phase=rng.uniform(0.0, 2.0 * np.pi, size=dim),
        noise_sigma=DEFAULT_PROFILE.noise_sigma if noise_sigma is None else noise_sigma,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# demonstration construction

@dataclass
class DemoRecord:
    position: PositionTrajectory
    orientation: OrientationTrajectory
    tactile: SensorTraceSet
    setting: BoardSetting
    demo_id: int


def _contact_signals(profile, n_samples):
    """(contact weight, contact progress) over the full pose grid.

    The progress clock driving the nominal trace pattern advances by a
    minimum-jerk profile within each in-contact stage and pauses at stage
    boundaries, so nominal trace motion stalls exactly where the phase
    velocity (and with it the expected-trace encoding capacity) dies.
    """
    n1, n2, n3 = profile.boundaries
    t = np.arange(n_samples)
    ramp = max(1, int(round(CONTACT_RAMP_FRACTION * (n2 - n1))))
    w = minimum_jerk((t - n1) / ramp)
    w[:n1] = 0.0
    progress = 0.5 * minimum_jerk((t - n1) / (n2 - n1)) \
        + 0.5 * minimum_jerk((t - n2) / (n3 - n2))
    return w, progress


def _correction_profile(profile, setting, amplitude, n_samples):
    """Roll correction (radians) on the pose grid: quintic ramp over stage 2
    to the board angle, held through stage 3 with a small refinement bump."""
    n1, n2, _ = profile.boundaries
    t = np.arange(n_samples, dtype=float)
    ramp = minimum_jerk((t - n1) / (n2 - n1))
    s3 = np.clip((t - n2) / (n_samples - 1 - n2), 0.0, 1.0)
    # the bump lives strictly inside stage 3 so coupling targets end near zero
    refine = profile.hold_bump_scale * bump((s3 - 0.15) / 0.55)
    refine[t <= n2] = 0.0
    return amplitude * setting.roll_rad * (ramp + refine)


def _demo_rng(seed, setting, demo_id):
    return np.random.default_rng((int(seed), int(round(setting.roll_deg * 1000)) + 10**6,
                                  int(demo_id)))


def _generate_demo(profile, setting, demo_id, seed, contact):
    rng = _demo_rng(seed, setting, demo_id)
    n1, n2, n3 = profile.boundaries
    n = profile.n_samples
    dt = profile.pose_dt
    t = np.arange(n) * dt

    jit = lambda: 1.0 + rng.uniform(-profile.jitter, profile.jitter)
    depth = profile.descend_depth * jit()
    slide = profile.slide_length * jit()
    home_roll = math.radians(profile.home_roll_deg) * jit()
    amplitude = jit()  # corrected-roll amplitude factor, <= 5% off the board angle

    idx = np.arange(n, dtype=float)
    pos = np.tile(np.asarray(profile.start_pos, dtype=float), (n, 1))
    pos[:, 2] -= depth * minimum_jerk(idx / n1)
    pos[:, 1] += slide * minimum_jerk((idx - n2) / (n3 - n2))

    roll_nominal = home_roll * (1.0 - minimum_jerk((idx - n1) / (n2 - n1)))
    correction = _correction_profile(profile, setting, amplitude, n)
    roll = roll_nominal + correction

    quats = [so3.exp_map([0.0, 0.5 * r, 0.0]) for r in roll]

    contact_w, progress = _contact_signals(profile, n)
    delta = contact_w * (setting.roll_rad - correction)
    delta_dot = np.gradient(delta, dt)
    roll_offset = contact_w * correction
    clean = (contact.nominal_profile(contact_w, progress)
             + contact.response(delta, delta_dot, roll_offset))

    # tactile recorded on its own (coarser) clock, noise added per sample
    n_tact = int(math.floor(t[-1] * profile.tactile_rate)) + 1
    t_tact = np.arange(n_tact) / profile.tactile_rate
    tact = np.empty((n_tact, profile.n_channels))
    for j in range(profile.n_channels):
        tact[:, j] = np.interp(t_tact, t, clean[:, j])
    tact += rng.normal(0.0, contact.noise_sigma, size=tact.shape)

    return DemoRecord(
        position=PositionTrajectory.from_positions(t, pos),
        orientation=OrientationTrajectory.from_quaternions(t, quats),
        tactile=SensorTraceSet(t_tact, tact, setting=setting.roll_deg),
        setting=setting,
        demo_id=int(demo_id),
    )


def generate_nominal_demos(count, seed, profile=DEFAULT_PROFILE, contact=None):
    """Demos at the 0-degree setting (zero correction by construction)."""
    return generate_corrected_demos(BoardSetting(0.0), count, seed, profile, contact)


def generate_corrected_demos(setting, count, seed, profile=DEFAULT_PROFILE, contact=None):
    if count < 1:
        raise ValidationError("need at least one demo")
    if contact is None:
        contact = build_contact_model(profile.n_channels, seed)
    if contact.n_channels != profile.n_channels:
        raise DataError("contact model channel count does not match profile")
    return [_generate_demo(profile, setting, k, seed, contact) for k in range(count)]


def generate_corpus(seed, profile=DEFAULT_PROFILE):
    """Full corpus: {setting_deg: [DemoRecord]} plus the contact model."""
    contact = build_contact_model(profile.n_channels, seed)
    corpus = {}
    for deg in profile.settings:
        corpus[float(deg)] = generate_corrected_demos(
            BoardSetting(float(deg)), profile.demos_per_setting, seed, profile, contact)
    return corpus, contact


# ---------------------------------------------------------------------------
# learned nominal behavior and closed-loop execution

@dataclass
class StageModel:
    """Everything learned about one movement stage."""

    index: int                       # 1-based stage number
    duration: float                  # executed span, seconds
    dt: float
    position: object                 # PositionPrimitive
    orientation: object              # QuaternionPrimitive
    traces: object                   # ExpectedTraceModel or None
    start_pos: np.ndarray
    start_quat: np.ndarray

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))


@dataclass
class NominalBehavior:
    """The three fitted stages plus scene bookkeeping for closed-loop runs."""

    stages: list
    dt: float
    contact_ramp_fraction: float = CONTACT_RAMP_FRACTION

    def stage(self, k):
        return self.stages[k - 1]


def roll_of(quat):
    """Signed roll angle (radians) about the scene's roll axis."""
    return 2.0 * so3.log_map(so3.canonicalize(quat))[ROLL_AXIS]


@dataclass
class ClosedLoopResult:
    record: DemoRecord
    final_roll_error_deg: float
    coupling: np.ndarray        # (T, M) applied coupling values
    deviations: np.ndarray      # (T, K) sensor deviations fed to the model
    misalignment: np.ndarray    # (T,) tool-board roll misalignment, radians
    stage_bounds: list          # sample index ranges per stage


def closed_loop_unroll(behavior, feedback_models, contact, setting, seed=0,
                       coupling_enabled=True):
    """Execute the three stages against the contact model.

    feedback_models maps stage index (2 and/or 3) to a trained FeedbackModel;
    pass an empty dict or coupling_enabled=False for the open-loop baseline.
    Returns a ClosedLoopResult whose final error is the terminal tool-board
    roll misalignment in degrees.
    """
    if not isinstance(setting, BoardSetting):
        setting = BoardSetting(float(setting))
    models = dict(feedback_models or {}) if coupling_enabled else {}
    for model in models.values():
        if model is not None and model.bank.n != behavior.stage(2).orientation.bank.n:
            raise DataError("feedback model kernel bank does not match the primitives")
    m_dim = max((m.n_outputs for m in models.values() if m is not None), default=1)
    rng = np.random.default_rng((int(seed), 0xC10))
    dt = behavior.dt

    qstate = None
    pstate = None
    t_rows, quat_rows, pos_rows = [], [], []
    coupling_rows, dev_rows, delta_rows, tact_rows = [], [], [], []
    stage_bounds = []
    t_global = 0.0
    # global contact clock mirrors the demo construction
    t1 = behavior.stage(1).duration
    t2 = t1 + behavior.stage(2).duration
    t3 = t2 + behavior.stage(3).duration
    ramp_time = behavior.contact_ramp_fraction * behavior.stage(2).duration

    def contact_weight(time):
        if time < t1:
            return 0.0
        return float(minimum_jerk((time - t1) / ramp_time))

    def contact_progress(time):
        return float(0.5 * minimum_jerk((time - t1) / (t2 - t1))
                     + 0.5 * minimum_jerk((time - t2) / (t3 - t2)))

    prev_delta = None
    for k in (1, 2, 3):
        stage = behavior.stage(k)
        qprim, pprim = stage.orientation, stage.position
        model = models.get(k)
        expected = stage.traces.unroll(dt) if stage.traces is not None else None
        plan_roll = _stage_plan_roll(stage, dt)

        start_quat = stage.start_quat if qstate is None else qstate.quat
        start_omega = np.zeros(3) if qstate is None else qstate.omega
        start_pos = stage.start_pos if pstate is None else pstate.pos
        start_vel = np.zeros(pprim.n_dims) if pstate is None else pstate.vel
        q_goal = qprim.resolve_goal(start_quat)
        p_goal = pprim.resolve_goal(start_pos)
        qstate = PrimitiveState(so3.canonicalize(start_quat), np.asarray(start_omega, dtype=float),
                                so3.canonicalize(start_quat), PhaseState())
        pstate = PositionState(np.asarray(start_pos, dtype=float).copy(),
                               np.asarray(start_vel, dtype=float).copy(),
                               np.asarray(start_pos, dtype=float).copy()
                               if pprim.goal_evolution else p_goal.copy(),
                               PhaseState())

        n_steps = stage.n_steps
        first_row = len(t_rows)
        # the terminal sample of stages 1 and 2 is recorded as the first
        # sample of the following stage (states coincide at the hand-off)
        last = n_steps if k == 3 else n_steps - 1
        for i in range(n_steps + 1):
            phase = qstate.phase
            c_roll = roll_of(qstate.quat) - plan_roll[i]
            w = contact_weight(t_global)
            delta = w * (setting.roll_rad - c_roll)
            delta_dot = 0.0 if prev_delta is None else (delta - prev_delta) / dt
            prev_delta = delta

            actual = (contact.nominal_profile([w], [contact_progress(t_global)])[0]
                      + contact.response([delta], [delta_dot], [w * c_roll])[0]
                      + rng.normal(0.0, contact.noise_sigma, size=contact.n_channels))
            coupling_vec = np.zeros(3)
            coupling_store = np.zeros(m_dim)
            dev = np.zeros(contact.n_channels)
            if expected is not None:
                dev = actual - expected[i]
                if model is not None:
                    pred = model.predict_batch(dev[None, :], [phase.p], [phase.u])[0]
                    coupling_store[:len(pred)] = pred
                    for m, axis in enumerate(model.coupling_axes):
                        coupling_vec[_axis_index(axis)] = pred[m]

            if i <= last:
                t_rows.append(t_global)
                quat_rows.append(qstate.quat.copy())
                pos_rows.append(pstate.pos.copy())
                coupling_rows.append(coupling_store)
                dev_rows.append(dev)
                tact_rows.append(actual)
                delta_rows.append(setting.roll_rad - c_roll)

            if i == n_steps:
                break
            f = forcing_term(phase.p, phase.u, qprim)
            qstate, _ = transformation_step(qstate, f, coupling_vec, qprim, dt, q_goal)
            fp = position_forcing_term(pstate.phase.p, pstate.phase.u, pprim)
            pstate, _ = position_transformation_step(pstate, fp, np.zeros(pprim.n_dims),
                                                     pprim, dt, p_goal)
            t_global += dt
        stage_bounds.append((first_row, len(t_rows) - 1))

    t_uni = np.arange(len(t_rows)) * dt
    record = DemoRecord(
        position=PositionTrajectory.from_positions(t_uni, np.asarray(pos_rows)),
        orientation=OrientationTrajectory.from_quaternions(t_uni, np.asarray(quat_rows)),
        tactile=SensorTraceSet(t_uni, np.asarray(tact_rows), setting=setting.roll_deg),
        setting=setting,
        demo_id=-1,
    )
    misalignment = np.asarray(delta_rows)
    return ClosedLoopResult(
        record=record,
        final_roll_error_deg=abs(math.degrees(misalignment[-1])),
        coupling=np.asarray(coupling_rows),
        deviations=np.asarray(dev_rows),
        misalignment=misalignment,
        stage_bounds=stage_bounds,
    )


def _axis_index(axis):
    return int(axis)


def _stage_plan_roll(stage, dt):
    """Roll profile of the stage's nominal plan (unrolled once, no coupling)."""
    plan = unroll(stage.orientation, stage.start_quat, dt=dt,
                  duration_factor=stage.duration / stage.orientation.tau)
    return np.array([roll_of(q) for q in plan.quat])
