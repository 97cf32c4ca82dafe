"""The `dmpfb` command line: pipeline orchestration as subcommands.

    gen-data          synthesize a demonstration corpus
    learn-nominal     segment nominal demos, fit primitives and traces
    extract-coupling  build the supervised coupling datasets
    train             train one feedback model on one dataset
    loo               leave-one-demonstration-out evaluation
    unroll            closed/open-loop episode against the contact model
    dominance         rank hidden features per phase kernel

Every command takes --config <json> whose keys mirror the flags; explicit
flags override file values.  The seed comes from --seed, the config, or
DMPFB_SEED, in that order of precedence, and is mandatory.  Exit codes:
0 success, 2 validation error, 3 data/IO error, 4 numerical failure.
"""

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace

import numpy as np

from . import modelio, report
from .errors import DataError, NumericalError, ValidationError
from .pipeline import FEEDBACK_STAGES, extract_coupling_datasets, learn_nominal
from .simulator import (
    PROFILES,
    ROLL_AXIS,
    BoardSetting,
    closed_loop_unroll,
    generate_corpus,
)
from .training import ArchSpec, TrainConfig, dominance_analysis, loo_evaluate, split_dataset, train_model

EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(args):
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValidationError("config file must hold a JSON object")
    return cfg


def _opt(args, cfg, name, default=None):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in cfg:
        return cfg[name]
    return default


def _seed(args, cfg):
    value = _opt(args, cfg, "seed")
    if value is None:
        value = os.environ.get("DMPFB_SEED")
    if value is None:
        raise ValidationError("seed is mandatory: pass --seed, set it in the "
                              "config, or export DMPFB_SEED")
    return int(value)


def _train_config(args, cfg, seed):
    return TrainConfig(
        learning_rate=float(_opt(args, cfg, "learning-rate", 1e-3)),
        rho=float(_opt(args, cfg, "rho", 0.9)),
        epsilon=float(_opt(args, cfg, "epsilon", 1e-8)),
        batch_size=int(_opt(args, cfg, "batch-size", 64)),
        max_steps=int(_opt(args, cfg, "steps", 5000)),
        dropout_rate=float(_opt(args, cfg, "dropout", 0.5)),
        check_interval=int(_opt(args, cfg, "check-interval", 50)),
        seed=seed,
        select_on=str(_opt(args, cfg, "select-on", "generalization")),
    )


def _prepare_dir(path, force):
    if os.path.exists(path) and os.listdir(path):
        if not force:
            raise DataError(f"output directory {path} is not empty (use --force)")
        shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    profile_name = _opt(args, cfg, "profile", "default")
    if profile_name not in PROFILES:
        raise ValidationError(f"unknown profile {profile_name!r}")
    out = _opt(args, cfg, "out")
    if not out:
        raise ValidationError("gen-data needs --out")
    _prepare_dir(out, args.force)
    corpus, contact = generate_corpus(seed, PROFILES[profile_name])
    counts = modelio.save_corpus(out, corpus, contact, seed, profile_name)
    for deg in sorted(corpus):
        print(f"setting {deg:+6.2f} deg: {counts[str(deg)]} demos")
    print(f"corpus written to {out}")
    return 0


def cmd_learn_nominal(args):
    cfg = _load_config(args)
    _ = _seed(args, cfg)   # the fit is deterministic; the seed pins provenance
    corpus_dir = _opt(args, cfg, "corpus")
    out = _opt(args, cfg, "out")
    if not corpus_dir or not out:
        raise ValidationError("learn-nominal needs --corpus and --out")
    corpus, _, _ = modelio.load_corpus(corpus_dir)
    if 0.0 not in corpus:
        raise DataError("corpus has no nominal (0 degree) setting")
    behavior, rep = learn_nominal(corpus[0.0])
    os.makedirs(out, exist_ok=True)
    paths = modelio.save_behavior(out, behavior)
    modelio.save_json(os.path.join(out, "reproduction.json"), rep)
    for stage in rep["stages"]:
        line = (f"primitive {stage['stage']}: duration {stage['duration']:.2f} s, "
                f"orientation NMSE {stage['orientation_nmse']:.2e}, "
                f"position NMSE {stage['position_nmse']:.2e}")
        if "traces_nmse" in stage:
            line += f", traces NMSE {stage['traces_nmse']:.2e}"
        print(line)
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_extract_coupling(args):
    cfg = _load_config(args)
    _ = _seed(args, cfg)
    corpus_dir = _opt(args, cfg, "corpus")
    models_dir = _opt(args, cfg, "models")
    out = _opt(args, cfg, "out")
    if not corpus_dir or not models_dir or not out:
        raise ValidationError("extract-coupling needs --corpus, --models, --out")
    corpus, _, _ = modelio.load_corpus(corpus_dir)
    behavior = modelio.load_behavior(models_dir)
    datasets = extract_coupling_datasets(corpus, behavior)
    os.makedirs(out, exist_ok=True)
    for k, ds in sorted(datasets.items()):
        path = os.path.join(out, f"coupling_prim{k}.csv")
        modelio.save_dataset_csv(path, ds)
        print(f"primitive {k}: {len(ds)} rows, {ds.n_inputs} deviation channels "
              f"-> {path}")
    return 0


def _resolve_bank(models_dir, stage):
    behavior = modelio.load_behavior(models_dir)
    return behavior.stage(stage).orientation.bank


def cmd_train(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    dataset_path = _opt(args, cfg, "dataset")
    models_dir = _opt(args, cfg, "models")
    out = _opt(args, cfg, "out")
    stage = int(_opt(args, cfg, "stage", 2))
    if not dataset_path or not models_dir or not out:
        raise ValidationError("train needs --dataset, --models, --out")
    arch = ArchSpec.parse(_opt(args, cfg, "arch", "pmnn:100"))
    fold = int(_opt(args, cfg, "fold-demo", 0))
    tconf = _train_config(args, cfg, seed)
    dataset = modelio.load_dataset_csv(dataset_path)
    bank = _resolve_bank(models_dir, stage)
    splits = split_dataset(dataset, fold, seed)
    model, curves = train_model(splits, arch, bank, tconf, coupling_axes=[ROLL_AXIS])
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    modelio.save_feedback_model(out, model)
    base = os.path.splitext(out)[0]
    modelio.save_curves_csv(base + "_curves.csv", curves)
    report.save_learning_curves(base + "_curves.png", curves,
                                title=f"{arch.describe()} on primitive {stage}")
    best = float(curves["generalization"].min())
    print(f"trained {arch.describe()} on {dataset_path} (fold demo {fold})")
    print(f"best generalization NMSE {best:.4f}; model -> {out}")
    return 0


def cmd_loo(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    dataset_path = _opt(args, cfg, "dataset")
    models_dir = _opt(args, cfg, "models")
    out = _opt(args, cfg, "out")
    stage = int(_opt(args, cfg, "stage", 2))
    if not dataset_path or not models_dir or not out:
        raise ValidationError("loo needs --dataset, --models, --out")
    arch = ArchSpec.parse(_opt(args, cfg, "arch", "pmnn:100"))
    tconf = _train_config(args, cfg, seed)
    dataset = modelio.load_dataset_csv(dataset_path)
    bank = _resolve_bank(models_dir, stage)
    rep = loo_evaluate(dataset, arch, bank, tconf)
    modelio.save_report(out, rep)
    report.save_report_bars(out + ".png", {arch.describe(): rep},
                            title=f"primitive {stage} leave-one-demo-out NMSE")
    print(rep.to_text())
    print(f"report -> {out}.json / {out}.txt")
    return 0


def cmd_unroll(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    corpus_dir = _opt(args, cfg, "corpus")
    models_dir = _opt(args, cfg, "models")
    out = _opt(args, cfg, "out")
    setting = float(_opt(args, cfg, "setting", 10.0))
    coupling = str(_opt(args, cfg, "coupling", "on")).lower()
    if coupling not in ("on", "off"):
        raise ValidationError("--coupling must be on or off")
    if not corpus_dir or not models_dir or not out:
        raise ValidationError("unroll needs --corpus, --models, --out")
    _, contact, _ = modelio.load_corpus(corpus_dir)
    behavior = modelio.load_behavior(models_dir)
    feedback = {}
    if coupling == "on":
        for k in FEEDBACK_STAGES:
            path = _opt(args, cfg, f"feedback-prim{k}") or os.path.join(
                models_dir, f"feedback_prim{k}.json")
            if not os.path.exists(path):
                raise DataError(f"missing feedback model {path}")
            feedback[k] = modelio.load_feedback_model(path)
    result = closed_loop_unroll(behavior, feedback, contact, BoardSetting(setting),
                                seed=seed, coupling_enabled=coupling == "on")
    os.makedirs(out, exist_ok=True)
    t = result.record.orientation.t
    modelio.write_csv(os.path.join(out, "coupling.csv"),
                       ["t"] + [f"C_{m + 1}" for m in range(result.coupling.shape[1])],
                       [t] + list(result.coupling.T))
    modelio.write_csv(os.path.join(out, "deviation.csv"),
                       ["t"] + [f"ds_{j + 1}" for j in range(result.deviations.shape[1])],
                       [t] + list(result.deviations.T))
    modelio.save_orientation_csv(os.path.join(out, "orientation.csv"),
                                 result.record.orientation)
    modelio.save_position_csv(os.path.join(out, "pose.csv"), result.record.position)
    summary = {
        "setting_deg": setting,
        "coupling": coupling,
        "final_roll_error_deg": result.final_roll_error_deg,
        "peak_abs_coupling": float(np.abs(result.coupling).max()),
        "seed": seed,
    }
    modelio.save_json(os.path.join(out, "summary.json"), summary)
    report.save_unroll_figure(os.path.join(out, "episode.png"), result,
                              title=f"{setting:+.2f} deg board, coupling {coupling}")
    print(f"setting {setting:+.2f} deg, coupling {coupling}: "
          f"final roll error {result.final_roll_error_deg:.3f} deg")
    print(f"episode artifacts -> {out}")
    return 0


def cmd_dominance(args):
    cfg = _load_config(args)
    _ = _seed(args, cfg)
    model_path = _opt(args, cfg, "model")
    out = _opt(args, cfg, "out")
    if not model_path or not out:
        raise ValidationError("dominance needs --model and --out")
    model = modelio.load_feedback_model(model_path)
    order, top = dominance_analysis(model)
    net = model.nets[0]
    with open(out, "w") as fh:
        fh.write("kernel,rank,feature,abs_weight,top10\n")
        for i in range(order.shape[0]):
            for rank, j in enumerate(order[i]):
                fh.write(f"{i},{rank},{j},{abs(net.mod_weights[i, j]):.17g},"
                         f"{int(top[i, rank])}\n")
    base = os.path.splitext(out)[0]
    report.save_dominance_heatmap(base + ".png", net.mod_weights, top)
    print(f"ranked {order.shape[1]} features per {order.shape[0]} phase kernels -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--seed", type=int, help="random seed (or DMPFB_SEED)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmpfb",
        description="learning tactile feedback models for movement primitives "
                    "on a synthetic tilt-board scraping task")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="synthesize a demonstration corpus")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("learn-nominal", help="fit primitives and expected traces")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.set_defaults(func=cmd_learn_nominal)

    p = subs.add_parser("extract-coupling", help="build coupling datasets")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--models")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract_coupling)

    for name, fn in (("train", cmd_train), ("loo", cmd_loo)):
        p = subs.add_parser(name, help=f"{name} a feedback model")
        _add_common(p)
        p.add_argument("--dataset")
        p.add_argument("--models")
        p.add_argument("--out")
        p.add_argument("--stage", type=int)
        p.add_argument("--arch")
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--check-interval", type=int)
        p.add_argument("--select-on", choices=("generalization", "validation"))
        if name == "train":
            p.add_argument("--fold-demo", type=int)
        p.set_defaults(func=fn)

    p = subs.add_parser("unroll", help="closed/open-loop episode")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--models")
    p.add_argument("--out")
    p.add_argument("--setting", type=float)
    p.add_argument("--coupling", choices=("on", "off"))
    p.add_argument("--feedback-prim2")
    p.add_argument("--feedback-prim3")
    p.set_defaults(func=cmd_unroll)

    p = subs.add_parser("dominance", help="rank hidden features per phase kernel")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dominance)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
