"""Orchestration of the learning pipeline on corpora of demonstrations:
segment nominal demos, fit per-stage primitives and expected traces, and
extract the supervised coupling dataset from corrected demos.

Stages found by ZVC segmentation are time-normalized onto a common grid (the
median stage length at the corpus sample interval) before fitting, so every
demo contributes equally-shaped rows to the pooled regressions.
"""

import numpy as np

from . import so3
from .canonical import CanonicalParams, phase_rollout
from .errors import DataError, SegmentationError
from .feedback import extract_coupling_target
from .primitives import (
    OrientationTrajectory,
    PositionTrajectory,
    fit_position_primitive,
    fit_quaternion_primitive,
    position_unroll,
    segment_zvc,
    unroll,
)
from .sensors import SensorTraceSet, deviation, fit_expected_traces
from .simulator import ROLL_AXIS, TAU_SCALE, NominalBehavior, StageModel
from .training import CouplingDataset, nmse

FEEDBACK_STAGES = (2, 3)   # stage 1 carries no correction


# ---------------------------------------------------------------------------
# stage slicing

def _resample_columns(t_src, values, t_new):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty((t_new.size, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.interp(t_new, t_src, values[:, j])
    return out


def _stage_window(demo, seg, k):
    a, z = seg.bounds(len(demo.position))[k - 1]
    return demo.position.t[a], demo.position.t[z]


def slice_stage(demo, seg, k, n_steps, dt):
    """Stage k of a demo, time-normalized onto n_steps+1 samples at spacing dt.

    Returns (OrientationTrajectory, PositionTrajectory, SensorTraceSet) with
    rates re-derived on the common grid.
    """
    t0, t1 = _stage_window(demo, seg, k)
    t_src = np.linspace(t0, t1, n_steps + 1)
    t_new = np.arange(n_steps + 1) * dt
    pos = _resample_columns(demo.position.t, demo.position.pos, t_src)
    quats = _resample_columns(demo.orientation.t, demo.orientation.quat, t_src)
    quats = np.array([so3.canonicalize(q) for q in quats])
    tact = _resample_columns(demo.tactile.t, demo.tactile.values, t_src)
    return (OrientationTrajectory.from_quaternions(t_new, quats),
            PositionTrajectory.from_positions(t_new, pos),
            SensorTraceSet(t_new, tact, setting=demo.setting.roll_deg))


def _segment_all(demos):
    segs = []
    for demo in demos:
        try:
            segs.append(segment_zvc(demo.position))
        except SegmentationError as exc:
            raise SegmentationError(
                f"segmentation failed on demo {demo.demo_id} "
                f"at {demo.setting.roll_deg} deg: {exc}") from exc
    return segs


# ---------------------------------------------------------------------------
# nominal behavior learning

def _informative_nmse(pred, ref, floor):
    """Mean NMSE over columns that actually move.

    Columns whose standard deviation is below `floor` (an absolute scale for
    the quantity) or below 0.1% of the largest column's are static up to
    numerical noise and are skipped; a fully static reference reports 0.
    """
    pred = np.atleast_2d(pred)
    ref = np.atleast_2d(ref)
    stds = ref.std(axis=0)
    keep = (stds > floor) & (stds > 1e-3 * stds.max())
    if not np.any(keep):
        return 0.0
    return float(np.mean([nmse(pred[:, j], ref[:, j]) for j in np.nonzero(keep)[0]]))


def _rotation_coords(quats):
    return np.array([2.0 * so3.log_map(q) for q in quats])


def learn_nominal(nominal_demos, n_kernels=25, tau_scale=TAU_SCALE,
                  goal_mode="relative"):
    """Fit the three-stage nominal behavior from 0-degree demos.

    Returns (NominalBehavior, report) where report carries per-stage
    reproduction NMSEs for the position/orientation primitives and the
    expected-trace model.
    """
    if not nominal_demos:
        raise DataError("no nominal demonstrations")
    dt = nominal_demos[0].position.dt
    segs = _segment_all(nominal_demos)
    bounds = [seg.bounds(len(d.position)) for seg, d in zip(segs, nominal_demos)]
    stage_steps = [int(round(np.median([b[k][1] - b[k][0] for b in bounds])))
                   for k in range(3)]
    if min(stage_steps) < 4:
        raise DataError(f"degenerate stage lengths {stage_steps}")

    stages = []
    report = {"stages": []}
    for k in (1, 2, 3):
        n_steps = stage_steps[k - 1]
        parts = [slice_stage(d, s, k, n_steps, dt) for d, s in zip(nominal_demos, segs)]
        oris = [p[0] for p in parts]
        poss = [p[1] for p in parts]
        tacts = [p[2] for p in parts]

        qprim = fit_quaternion_primitive(oris, n_kernels=n_kernels,
                                         tau_scale=tau_scale, goal_mode=goal_mode)
        pprim = fit_position_primitive(poss, n_kernels=n_kernels, bank=qprim.bank,
                                       tau_scale=tau_scale, goal_mode=goal_mode)
        traces = None
        if k in FEEDBACK_STAGES:
            traces = fit_expected_traces(tacts, qprim.canonical, qprim.bank)

        duration = n_steps * dt
        factor = duration / qprim.tau
        q_rep = unroll(qprim, qprim.start, dt=dt, duration_factor=factor)
        p_rep = position_unroll(pprim, pprim.start, dt=dt, duration_factor=factor)
        mean_rot = np.mean([_rotation_coords(o.quat) for o in oris], axis=0)
        mean_pos = np.mean([p.pos for p in poss], axis=0)
        stage_report = {
            "stage": k,
            "duration": duration,
            "n_steps": n_steps,
            "orientation_nmse": _informative_nmse(_rotation_coords(q_rep.quat),
                                                  mean_rot, floor=1e-4),
            "position_nmse": _informative_nmse(p_rep.pos, mean_pos, floor=1e-6),
        }
        if traces is not None:
            mean_tact = np.mean([t.values for t in tacts], axis=0)
            stage_report["traces_nmse"] = _informative_nmse(traces.unroll(dt),
                                                            mean_tact, floor=1e-3)
        report["stages"].append(stage_report)

        stages.append(StageModel(
            index=k, duration=duration, dt=dt,
            position=pprim, orientation=qprim, traces=traces,
            start_pos=pprim.start.copy(), start_quat=qprim.start.copy(),
        ))
    return NominalBehavior(stages=stages, dt=dt), report


# ---------------------------------------------------------------------------
# coupling dataset extraction

def extract_coupling_datasets(corpus, behavior, coupling_axes=(ROLL_AXIS,)):
    """Supervised rows for the feedback stages, all settings and demos.

    corpus maps setting (degrees) to a list of DemoRecords; returns
    {stage: CouplingDataset} for stages 2 and 3 with targets restricted to
    `coupling_axes` (default: the roll axis only).
    """
    if not corpus:
        raise DataError("empty corpus")
    axes = [int(a) for a in coupling_axes]
    rows = {k: {"demo": [], "setting": [], "p": [], "u": [], "ds": [], "c": []}
            for k in FEEDBACK_STAGES}
    for deg in sorted(corpus):
        demos = corpus[deg]
        if not demos:
            raise DataError(f"no demos at setting {deg}")
        segs = _segment_all(demos)
        for demo, seg in zip(demos, segs):
            for k in FEEDBACK_STAGES:
                stage = behavior.stage(k)
                if stage.traces is None:
                    raise DataError(f"stage {k} has no expected-trace model")
                ori, _, tact = slice_stage(demo, seg, k, stage.n_steps, stage.dt)
                targets = extract_coupling_target(ori, stage.orientation)
                ds = deviation(tact, stage.traces, dt=stage.dt)
                p, u = phase_rollout(CanonicalParams(tau=stage.orientation.tau),
                                     stage.dt, stage.n_steps)
                n = stage.n_steps + 1
                bucket = rows[k]
                bucket["demo"].append(np.full(n, demo.demo_id))
                bucket["setting"].append(np.full(n, float(deg)))
                bucket["p"].append(p)
                bucket["u"].append(u)
                bucket["ds"].append(ds)
                bucket["c"].append(targets[:, axes])
    out = {}
    for k, bucket in rows.items():
        out[k] = CouplingDataset(
            demo_ids=np.concatenate(bucket["demo"]),
            settings=np.concatenate(bucket["setting"]),
            p=np.concatenate(bucket["p"]),
            u=np.concatenate(bucket["u"]),
            inputs=np.vstack(bucket["ds"]),
            targets=np.vstack(bucket["c"]),
        )
    return out
