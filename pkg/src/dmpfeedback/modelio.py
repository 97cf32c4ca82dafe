"""File formats: JSON model documents, CSV trajectories/traces/datasets, and
the corpus directory layout.

Layouts
-------
corpus/<setting>/demo_<k>/{pose.csv, orientation.csv, tactile.csv} plus
corpus/meta.json carrying settings, counts, seed, and the contact-model
parameters.

Primitive documents: {type, N, centers, widths, tau, gains, weights
(row-major, axis-major), goal, ...}; one stage document bundles the position
and quaternion primitives with the expected-trace model.  Feedback-model
documents carry input/target normalization, the kernel bank, and per-output
network weights (row-major).

CSV headers: orientation `t,Q_r,Q_x,Q_y,Q_z,wx,wy,wz,dwx,dwy,dwz`, position
`t,x,y,z,vx,vy,vz,ax,ay,az`, traces `t,e1..eK`, coupling datasets
`demo_id,setting,p,u,ds_1..ds_K,C_1..C_M`, learning curves
`step,train,val,test,gen`.  Floats are written with repr precision so
identical data means identical bytes.
"""

import json
import os

import numpy as np

from .canonical import PhaseKernelBank
from .errors import DataError
from .feedback import FeedbackModel, FfnnParams, PcaProjection, PmnnParams
from .primitives import (
    OrientationTrajectory,
    PositionPrimitive,
    PositionTrajectory,
    QuaternionPrimitive,
)
from .sensors import ExpectedTraceModel, SensorTraceSet
from .simulator import BoardSetting, ContactModel, DemoRecord, NominalBehavior, StageModel
from .training import CouplingDataset, EvalReport

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# small helpers

def write_csv(path, header, columns):
    columns = [np.asarray(c, dtype=float) for c in columns]
    rows = columns[0].size
    for c in columns:
        if c.size != rows:
            raise DataError("csv columns disagree in length")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(FLOAT_FMT % c[i] for c in columns) + "\n")


def _read_csv(path, expected_header=None):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if expected_header is not None and header != expected_header:
        raise DataError(f"{path}: unexpected header {header}")
    return header, data


def save_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# trajectories and traces

ORIENTATION_HEADER = ["t", "Q_r", "Q_x", "Q_y", "Q_z", "wx", "wy", "wz", "dwx", "dwy", "dwz"]
POSITION_HEADER = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"]


def save_orientation_csv(path, traj):
    cols = [traj.t] + list(traj.quat.T) + list(traj.omega.T) + list(traj.omega_dot.T)
    write_csv(path, ORIENTATION_HEADER, cols)


def load_orientation_csv(path):
    _, data = _read_csv(path, ORIENTATION_HEADER)
    return OrientationTrajectory(data[:, 0], data[:, 1:5], data[:, 5:8], data[:, 8:11])


def save_position_csv(path, traj):
    if traj.n_dims != 3:
        raise DataError("position csv format is for 3-dof trajectories")
    cols = [traj.t] + list(traj.pos.T) + list(traj.vel.T) + list(traj.acc.T)
    write_csv(path, POSITION_HEADER, cols)


def load_position_csv(path):
    _, data = _read_csv(path, POSITION_HEADER)
    return PositionTrajectory(data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:10])


def trace_header(n_channels):
    return ["t"] + [f"e{j + 1}" for j in range(n_channels)]


def save_traces_csv(path, traces):
    write_csv(path, trace_header(traces.n_channels), [traces.t] + list(traces.values.T))


def load_traces_csv(path, setting=0.0):
    header, data = _read_csv(path)
    if header != trace_header(len(header) - 1):
        raise DataError(f"{path}: unexpected trace header")
    return SensorTraceSet(data[:, 0], data[:, 1:], setting=setting)


# ---------------------------------------------------------------------------
# corpus directory layout

def _setting_dirname(deg):
    return f"roll_{deg:+06.2f}"


def save_corpus(out_dir, corpus, contact, seed, profile_name):
    os.makedirs(out_dir, exist_ok=True)
    counts = {}
    for deg in sorted(corpus):
        for demo in corpus[deg]:
            demo_dir = os.path.join(out_dir, _setting_dirname(deg), f"demo_{demo.demo_id:02d}")
            os.makedirs(demo_dir, exist_ok=True)
            save_position_csv(os.path.join(demo_dir, "pose.csv"), demo.position)
            save_orientation_csv(os.path.join(demo_dir, "orientation.csv"), demo.orientation)
            save_traces_csv(os.path.join(demo_dir, "tactile.csv"), demo.tactile)
        counts[str(deg)] = len(corpus[deg])
    save_json(os.path.join(out_dir, "meta.json"), {
        "settings": sorted(float(d) for d in corpus),
        "counts": counts,
        "seed": int(seed),
        "profile": profile_name,
        "contact_model": contact_model_to_dict(contact),
    })
    return counts


def load_corpus(corpus_dir):
    meta = load_json(os.path.join(corpus_dir, "meta.json"))
    contact = contact_model_from_dict(meta["contact_model"])
    corpus = {}
    for deg in meta["settings"]:
        setting_dir = os.path.join(corpus_dir, _setting_dirname(deg))
        if not os.path.isdir(setting_dir):
            raise DataError(f"missing setting directory {setting_dir}")
        demos = []
        for name in sorted(os.listdir(setting_dir)):
            demo_dir = os.path.join(setting_dir, name)
            if not name.startswith("demo_") or not os.path.isdir(demo_dir):
                continue
            demos.append(DemoRecord(
                position=load_position_csv(os.path.join(demo_dir, "pose.csv")),
                orientation=load_orientation_csv(os.path.join(demo_dir, "orientation.csv")),
                tactile=load_traces_csv(os.path.join(demo_dir, "tactile.csv"), setting=deg),
                setting=BoardSetting(float(deg)),
                demo_id=int(name.split("_")[1]),
            ))
        if not demos:
            raise DataError(f"no demos under {setting_dir}")
        corpus[float(deg)] = demos
    return corpus, contact, meta


def contact_model_to_dict(contact):
    return {
        "sensitivity": contact.sensitivity.tolist(),
        "tanh_gain": contact.tanh_gain.tolist(),
        "roll_gain": contact.roll_gain.tolist(),
        "baseline_offset": contact.baseline_offset.tolist(),
        "baseline_amp": contact.baseline_amp.tolist(),
        "baseline_freq": contact.baseline_freq.tolist(),
        "baseline_phase": contact.baseline_phase.tolist(),
        "noise_sigma": float(contact.noise_sigma),
        "seed": int(contact.seed),
    }


def contact_model_from_dict(doc):
    return ContactModel(**{k: (np.asarray(v) if isinstance(v, list) else v)
                           for k, v in doc.items()})


# ---------------------------------------------------------------------------
# primitive and stage documents

def _bank_to_dict(bank):
    return {"N": int(bank.n), "centers": bank.centers.tolist(),
            "widths": bank.widths.tolist()}


def _bank_from_dict(doc):
    return PhaseKernelBank(np.asarray(doc["centers"]), np.asarray(doc["widths"]))


def primitive_to_dict(prim):
    doc = {
        "type": "quaternion" if isinstance(prim, QuaternionPrimitive) else "position",
        "N": int(prim.bank.n),
        "centers": prim.bank.centers.tolist(),
        "widths": prim.bank.widths.tolist(),
        "tau": float(prim.tau),
        "gains": {"alpha": float(prim.alpha), "beta": float(prim.beta),
                  "alpha_goal": float(prim.alpha_goal)},
        "weights": prim.weights.T.tolist(),     # axis-major rows
        "goal": prim.goal.tolist(),
        "start": prim.start.tolist(),
        "goal_mode": prim.goal_mode,
    }
    if isinstance(prim, PositionPrimitive):
        doc["goal_evolution"] = bool(prim.goal_evolution)
    return doc


def primitive_from_dict(doc):
    bank = PhaseKernelBank(np.asarray(doc["centers"]), np.asarray(doc["widths"]))
    weights = np.asarray(doc["weights"]).T
    common = dict(weights=weights, goal=np.asarray(doc["goal"]),
                  start=np.asarray(doc["start"]), tau=doc["tau"], bank=bank,
                  alpha=doc["gains"]["alpha"], alpha_goal=doc["gains"]["alpha_goal"],
                  goal_mode=doc.get("goal_mode", "absolute"))
    if doc["type"] == "quaternion":
        return QuaternionPrimitive(**common)
    return PositionPrimitive(goal_evolution=doc.get("goal_evolution", True), **common)


def stage_to_dict(stage):
    doc = {
        "stage": int(stage.index),
        "duration": float(stage.duration),
        "dt": float(stage.dt),
        "position": primitive_to_dict(stage.position),
        "quaternion": primitive_to_dict(stage.orientation),
        "start_pos": stage.start_pos.tolist(),
        "start_quat": stage.start_quat.tolist(),
        "expected_traces": None,
    }
    if stage.traces is not None:
        doc["expected_traces"] = {
            "primitive": primitive_to_dict(stage.traces.primitive),
            "starts": stage.traces.starts.tolist(),
            "duration": float(stage.traces.duration),
        }
    return doc


def stage_from_dict(doc):
    traces = None
    if doc.get("expected_traces"):
        tdoc = doc["expected_traces"]
        traces = ExpectedTraceModel(primitive=primitive_from_dict(tdoc["primitive"]),
                                    starts=np.asarray(tdoc["starts"]),
                                    duration=tdoc["duration"])
    return StageModel(
        index=doc["stage"], duration=doc["duration"], dt=doc["dt"],
        position=primitive_from_dict(doc["position"]),
        orientation=primitive_from_dict(doc["quaternion"]),
        traces=traces,
        start_pos=np.asarray(doc["start_pos"]),
        start_quat=np.asarray(doc["start_quat"]),
    )


def save_behavior(models_dir, behavior):
    os.makedirs(models_dir, exist_ok=True)
    paths = []
    for stage in behavior.stages:
        path = os.path.join(models_dir, f"primitive_{stage.index}.json")
        save_json(path, stage_to_dict(stage))
        paths.append(path)
    save_json(os.path.join(models_dir, "behavior.json"), {
        "dt": float(behavior.dt),
        "contact_ramp_fraction": float(behavior.contact_ramp_fraction),
        "stages": [f"primitive_{s.index}.json" for s in behavior.stages],
    })
    return paths


def load_behavior(models_dir):
    meta = load_json(os.path.join(models_dir, "behavior.json"))
    stages = [stage_from_dict(load_json(os.path.join(models_dir, name)))
              for name in meta["stages"]]
    return NominalBehavior(stages=stages, dt=meta["dt"],
                           contact_ramp_fraction=meta["contact_ramp_fraction"])


# ---------------------------------------------------------------------------
# coupling datasets

def dataset_header(n_inputs, n_targets):
    return (["demo_id", "setting", "p", "u"]
            + [f"ds_{j + 1}" for j in range(n_inputs)]
            + [f"C_{m + 1}" for m in range(n_targets)])


def save_dataset_csv(path, dataset):
    cols = ([dataset.demo_ids.astype(float), dataset.settings, dataset.p, dataset.u]
            + list(dataset.inputs.T) + list(dataset.targets.T))
    write_csv(path, dataset_header(dataset.n_inputs, dataset.n_targets), cols)


def load_dataset_csv(path):
    header, data = _read_csv(path)
    n_inputs = sum(1 for h in header if h.startswith("ds_"))
    n_targets = sum(1 for h in header if h.startswith("C_"))
    if header != dataset_header(n_inputs, n_targets):
        raise DataError(f"{path}: unexpected dataset header")
    return CouplingDataset(
        demo_ids=data[:, 0].astype(int), settings=data[:, 1],
        p=data[:, 2], u=data[:, 3],
        inputs=data[:, 4:4 + n_inputs],
        targets=data[:, 4 + n_inputs:4 + n_inputs + n_targets])


# ---------------------------------------------------------------------------
# feedback models

def _net_to_dict(net):
    if isinstance(net, PmnnParams):
        return {
            "type": "pmnn",
            "hidden": [{"W": w.tolist(), "b": b.tolist()}
                       for w, b in zip(net.hidden_weights, net.hidden_biases)],
            "modulated": {"W": net.mod_weights.tolist(), "b": net.mod_bias.tolist()},
            "output": {"w": net.out_weights.tolist()},
            "train_output": bool(net.train_output),
        }
    return {
        "type": "ffnn",
        "hidden": [{"W": w.tolist(), "b": b.tolist()}
                   for w, b in zip(net.hidden_weights, net.hidden_biases)],
        "output": {"w": net.out_weights.tolist(), "b": float(net.out_bias)},
    }


def _net_from_dict(doc):
    hw = [np.asarray(layer["W"]) for layer in doc["hidden"]]
    hb = [np.asarray(layer["b"]) for layer in doc["hidden"]]
    if doc["type"] == "pmnn":
        return PmnnParams(hw, hb, np.asarray(doc["modulated"]["W"]),
                          np.asarray(doc["modulated"]["b"]),
                          np.asarray(doc["output"]["w"]),
                          train_output=doc.get("train_output", True))
    return FfnnParams(hw, hb, np.asarray(doc["output"]["w"]), doc["output"]["b"])


def feedback_model_to_dict(model):
    return {
        "kind": model.kind,
        "input_dim": int(model.input_mean.size),
        "coupling_axes": [int(a) for a in model.coupling_axes],
        "normalization": {
            "input_mean": model.input_mean.tolist(),
            "input_std": model.input_std.tolist(),
            "target_scale": model.target_scale.tolist(),
        },
        "bank": _bank_to_dict(model.bank),
        "pca": None if model.pca is None else {
            "mean": model.pca.mean.tolist(),
            "components": model.pca.components.tolist(),
        },
        "phase_inputs": bool(model.phase_inputs),
        "networks": [_net_to_dict(net) for net in model.nets],
    }


def feedback_model_from_dict(doc):
    pca = None
    if doc.get("pca"):
        pca = PcaProjection(np.asarray(doc["pca"]["mean"]),
                            np.asarray(doc["pca"]["components"]))
    return FeedbackModel(
        kind=doc["kind"],
        nets=[_net_from_dict(n) for n in doc["networks"]],
        bank=_bank_from_dict(doc["bank"]),
        input_mean=np.asarray(doc["normalization"]["input_mean"]),
        input_std=np.asarray(doc["normalization"]["input_std"]),
        target_scale=np.asarray(doc["normalization"]["target_scale"]),
        coupling_axes=[int(a) for a in doc["coupling_axes"]],
        pca=pca,
        phase_inputs=doc.get("phase_inputs", True),
    )


def save_feedback_model(path, model):
    save_json(path, feedback_model_to_dict(model))


def load_feedback_model(path):
    return feedback_model_from_dict(load_json(path))


# ---------------------------------------------------------------------------
# curves and reports

CURVES_HEADER = ["step", "train", "val", "test", "gen"]


def save_curves_csv(path, curves):
    write_csv(path, CURVES_HEADER,
               [curves["step"].astype(float), curves["train"], curves["validation"],
                curves["test"], curves["generalization"]])


def save_report(path_base, report):
    save_json(path_base + ".json", report.to_dict())
    with open(path_base + ".txt", "w") as fh:
        fh.write(report.to_text() + "\n")


def report_from_dict(doc):
    fold_ids = doc["folds"]
    per_fold = np.array([[doc["per_fold"][str(f)][name] for name in EvalReport.SPLIT_NAMES]
                         for f in fold_ids])
    return EvalReport(arch=doc["arch"], fold_ids=fold_ids, per_fold=per_fold,
                      per_setting={float(k): v for k, v in
                                   doc.get("generalization_by_setting", {}).items()})
