"""Training and evaluation: RMSProp, the NMSE metric, dataset splitting, the
leave-one-demonstration-out protocol, and the phase-dominance analysis.

Per fold, the rows of the held-out demonstration (across every setting) form
the generalization set; the remaining rows are shuffled and split
85 / 7.5 / 7.5 into train / validation / test.  Snapshots are evaluated at a
fixed interval and the one with the lowest generalization NMSE is reported,
mirroring the original protocol (selection on validation NMSE is available
behind a flag since selecting on the held-out fold leaks it).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericalError, ValidationError
from .feedback import (
    FeedbackModel,
    PmnnParams,
    ffnn_dropout_masks,
    ffnn_forward,
    ffnn_gradient,
    init_ffnn,
    init_pmnn,
    make_dropout_masks,
    pca_fit,
    pmnn_forward,
    pmnn_gradient,
)

SPLIT_FRACTIONS = (0.85, 0.075, 0.075)


# ---------------------------------------------------------------------------
# metric and optimizer

def nmse(pred, target):
    """Mean squared prediction error divided by the target variance."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.size == 0 or pred.size != target.size:
        raise ValidationError("nmse needs equal, nonzero-length inputs")
    var = float(np.var(target))
    if var <= 0.0:
        raise NumericalError("zero-variance target in nmse")
    return float(np.mean((pred - target) ** 2)) / var


def rmsprop_init(params):
    return [np.zeros_like(p) for p in params]


def rmsprop_step(params, grads, state, config, trainable=None):
    """v <- rho v + (1-rho) g^2;  theta <- theta - lr * g / (sqrt(v) + eps)."""
    new_params, new_state = [], []
    for i, (p, g, v) in enumerate(zip(params, grads, state)):
        if trainable is not None and not trainable[i]:
            new_params.append(p)
            new_state.append(v)
            continue
        v = config.rho * v + (1.0 - config.rho) * g**2
        new_params.append(p - config.learning_rate * g / (np.sqrt(v) + config.epsilon))
        new_state.append(v)
    return new_params, new_state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 64
    max_steps: int = 5000
    dropout_rate: float = 0.5
    check_interval: int = 50
    seed: int = 0
    select_on: str = "generalization"   # or "validation"

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValidationError("learning rate must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("rho must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch size must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout rate must lie in [0, 1)")
        if self.select_on not in ("generalization", "validation"):
            raise ValidationError(f"unknown snapshot selection {self.select_on!r}")


# ---------------------------------------------------------------------------
# dataset container and splitting

@dataclass
class CouplingDataset:
    """Supervised rows (demo id, setting, phase, deviation inputs, targets)."""

    demo_ids: np.ndarray    # (R,) int
    settings: np.ndarray    # (R,) float, board roll in degrees
    p: np.ndarray           # (R,)
    u: np.ndarray           # (R,)
    inputs: np.ndarray      # (R, K) sensor-trace deviations
    targets: np.ndarray     # (R, M) coupling targets

    def __post_init__(self):
        self.demo_ids = np.asarray(self.demo_ids, dtype=int)
        self.settings = np.asarray(self.settings, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        n = self.demo_ids.size
        if not (self.settings.size == self.p.size == self.u.size == n
                and self.inputs.shape[0] == n and self.targets.shape[0] == n):
            raise DataError("dataset columns disagree in length")
        for name in ("p", "u", "inputs", "targets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in dataset column {name}")

    def __len__(self):
        return self.demo_ids.size

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    @property
    def n_targets(self):
        return self.targets.shape[1]

    def subset(self, idx):
        return CouplingDataset(self.demo_ids[idx], self.settings[idx],
                               self.p[idx], self.u[idx],
                               self.inputs[idx], self.targets[idx])

    @classmethod
    def concatenate(cls, parts):
        return cls(np.concatenate([d.demo_ids for d in parts]),
                   np.concatenate([d.settings for d in parts]),
                   np.concatenate([d.p for d in parts]),
                   np.concatenate([d.u for d in parts]),
                   np.vstack([d.inputs for d in parts]),
                   np.vstack([d.targets for d in parts]))


def split_dataset(dataset, holdout_demo, seed):
    """Hold out one demo id (all settings) and split the rest 85/7.5/7.5.

    Returns {"train", "validation", "test", "generalization"}; the shuffle is
    a pure function of the seed.
    """
    gen_mask = dataset.demo_ids == holdout_demo
    if not np.any(gen_mask):
        raise ValidationError(f"demo id {holdout_demo} absent from dataset")
    rest = np.nonzero(~gen_mask)[0]
    if rest.size < 3:
        raise DataError("not enough remaining rows to split")
    order = np.random.default_rng(seed).permutation(rest.size)
    rest = rest[order]
    n = rest.size
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    return {
        "train": dataset.subset(rest[:n_train]),
        "validation": dataset.subset(rest[n_train:n_train + n_val]),
        "test": dataset.subset(rest[n_train + n_val:]),
        "generalization": dataset.subset(np.nonzero(gen_mask)[0]),
    }


# ---------------------------------------------------------------------------
# architectures

@dataclass(frozen=True)
class ArchSpec:
    """Feedback-model architecture: kind plus its structural knobs."""

    kind: str = "pmnn"                 # "pmnn" | "ffnn" | "pca_pmnn"
    hidden: tuple = (100,)
    n_kernels: int = 25
    pca_retained: float = 0.99
    phase_inputs: bool = True          # ffnn only

    def __post_init__(self):
        if self.kind not in ("pmnn", "ffnn", "pca_pmnn"):
            raise ValidationError(f"unknown architecture kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @staticmethod
    def parse(text):
        """Parse "pmnn:100", "pmnn", "ffnn:100,25", "pca:0.99"."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == "pmnn":
            hidden = tuple(int(v) for v in arg.split(",") if v.strip()) if arg else ()
            return ArchSpec(kind="pmnn", hidden=hidden)
        if kind == "ffnn":
            hidden = tuple(int(v) for v in arg.split(",") if v.strip()) or (100, 25)
            return ArchSpec(kind="ffnn", hidden=hidden)
        if kind == "pca":
            return ArchSpec(kind="pca_pmnn", hidden=(),
                            pca_retained=float(arg) if arg else 0.99)
        raise ValidationError(f"cannot parse architecture {text!r}")

    def describe(self):
        if self.kind == "pmnn":
            return "pmnn:" + ",".join(map(str, self.hidden)) if self.hidden else "pmnn"
        if self.kind == "ffnn":
            return "ffnn:" + ",".join(map(str, self.hidden))
        return f"pca:{self.pca_retained}"


# ---------------------------------------------------------------------------
# training

def _eval_model(model, dataset):
    """Mean per-dimension NMSE of a model on a dataset (dropout off)."""
    pred = model.predict_batch(dataset.inputs, dataset.p, dataset.u)
    return float(np.mean([nmse(pred[:, m], dataset.targets[:, m])
                          for m in range(dataset.n_targets)]))


def _clone_params(params):
    return [p.copy() for p in params]


def build_feedback_model(arch, splits_train, bank, rng):
    """Assemble an untrained FeedbackModel with normalization from the train split."""
    mean = splits_train.inputs.mean(axis=0)
    std = splits_train.inputs.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    scale = splits_train.targets.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    pca = None
    feat_dim = splits_train.n_inputs
    if arch.kind == "pca_pmnn":
        pca = pca_fit((splits_train.inputs - mean) / std, arch.pca_retained)
        feat_dim = pca.n_components
    nets = []
    for _ in range(splits_train.n_targets):
        if arch.kind == "ffnn":
            in_dim = feat_dim + (2 if arch.phase_inputs else 0)
            nets.append(init_ffnn(in_dim, arch.hidden, rng))
        elif arch.kind == "pca_pmnn":
            nets.append(init_pmnn(feat_dim, (), arch.n_kernels, rng, train_output=False))
        else:
            nets.append(init_pmnn(feat_dim, arch.hidden, arch.n_kernels, rng))
    return FeedbackModel(kind=arch.kind, nets=nets, bank=bank,
                         input_mean=mean, input_std=std, target_scale=scale,
                         coupling_axes=list(range(splits_train.n_targets)),
                         pca=pca, phase_inputs=arch.phase_inputs)


def train_model(splits, arch, bank, config, coupling_axes=None):
    """Mini-batch RMSProp with dropout; returns (FeedbackModel, curves).

    curves is a record array with columns (step, train, validation, test,
    generalization); the returned model carries, per output dimension, the
    snapshot that minimized the selected NMSE.
    """
    train = splits["train"]
    if len(train) == 0:
        raise DataError("empty train split")
    rng = np.random.default_rng(config.seed)
    model = build_feedback_model(arch, train, bank, rng)
    if coupling_axes is not None:
        model.coupling_axes = list(coupling_axes)

    feats = {name: model.net_inputs(ds.inputs, ds.p, ds.u) for name, ds in splits.items()}
    # per-dimension normalized targets
    targets = {name: ds.targets / model.target_scale for name, ds in splits.items()}

    check_steps = sorted(set(
        list(range(config.check_interval, config.max_steps + 1, config.check_interval))
        + [config.max_steps]))
    curve_rows = []
    select_key = "generalization" if config.select_on == "generalization" else "validation"

    def dim_nmse(net, m, name):
        x = feats[name]
        if arch.kind == "ffnn":
            pred = ffnn_forward(net, x)
        else:
            pred = pmnn_forward(net, x, splits[name].p, splits[name].u, bank)
        return nmse(pred, targets[name][:, m])

    per_dim_curves = []
    for m in range(train.n_targets):
        net = model.nets[m]
        dim_rng = np.random.default_rng((config.seed, m))
        params = net.parameters()
        state = rmsprop_init(params)
        trainable = net.trainable_mask()
        best = None
        rows = []
        n_rows = len(train)
        x_train = feats["train"]
        y_train = targets["train"][:, m]
        for step in range(1, config.max_steps + 1):
            idx = dim_rng.integers(0, n_rows, size=min(config.batch_size, n_rows))
            xb, yb = x_train[idx], y_train[idx]
            if arch.kind == "ffnn":
                masks = ffnn_dropout_masks(net, len(idx), config.dropout_rate, dim_rng)
                loss, grads = ffnn_gradient(net, xb, yb, masks=masks)
            else:
                masks = make_dropout_masks(net, len(idx), config.dropout_rate, dim_rng)
                loss, grads = pmnn_gradient(net, xb, train.p[idx], train.u[idx], yb,
                                            bank, masks=masks)
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged at step {step} (dim {m})")
            params, state = rmsprop_step(params, grads, state, config, trainable)
            net.set_parameters(params)
            if step in check_steps:
                scores = {name: dim_nmse(net, m, name) for name in splits}
                rows.append((step, scores["train"], scores["validation"],
                             scores["test"], scores["generalization"]))
                if best is None or scores[select_key] < best[0]:
                    best = (scores[select_key], _clone_params(params), scores)
        net.set_parameters(best[1])
        per_dim_curves.append(rows)

    for row_set in zip(*per_dim_curves):
        step = row_set[0][0]
        mean_vals = np.mean([r[1:] for r in row_set], axis=0)
        curve_rows.append((step, *mean_vals))
    curves = np.array(curve_rows, dtype=[("step", int), ("train", float),
                                         ("validation", float), ("test", float),
                                         ("generalization", float)])
    return model, curves


# ---------------------------------------------------------------------------
# leave-one-demonstration-out protocol

@dataclass
class EvalReport:
    """Per-fold and aggregate NMSEs of one architecture on one dataset."""

    arch: str
    fold_ids: list
    per_fold: np.ndarray                 # (F, 4): train/val/test/generalization
    per_setting: dict = field(default_factory=dict)

    SPLIT_NAMES = ("train", "validation", "test", "generalization")

    def __post_init__(self):
        self.per_fold = np.atleast_2d(np.asarray(self.per_fold, dtype=float))
        if self.per_fold.shape != (len(self.fold_ids), 4):
            raise DataError("per-fold table must be (n_folds, 4)")
        if np.any(self.per_fold < 0.0):
            raise DataError("NMSE values must be nonnegative")

    @property
    def mean(self):
        return self.per_fold.mean(axis=0)

    @property
    def std(self):
        return self.per_fold.std(axis=0)

    def to_dict(self):
        return {
            "arch": self.arch,
            "folds": [int(f) for f in self.fold_ids],
            "per_fold": {str(f): dict(zip(self.SPLIT_NAMES, map(float, row)))
                         for f, row in zip(self.fold_ids, self.per_fold)},
            "mean": dict(zip(self.SPLIT_NAMES, map(float, self.mean))),
            "std": dict(zip(self.SPLIT_NAMES, map(float, self.std))),
            "generalization_by_setting": {str(k): float(v)
                                          for k, v in sorted(self.per_setting.items())},
        }

    def to_text(self):
        lines = [f"Coupling-term learning NMSE ({self.arch}), "
                 f"{len(self.fold_ids)} leave-one-demo-out folds",
                 "          " + "".join(f"{n:>16}" for n in self.SPLIT_NAMES)]
        lines.append("mean+-std " + "".join(
            f"{m:8.3f}+-{s:<6.3f}" for m, s in zip(self.mean, self.std)))
        if self.per_setting:
            lines.append("generalization by setting: " + ", ".join(
                f"{k}deg: {v:.3f}" for k, v in sorted(self.per_setting.items())))
        return "\n".join(lines)


def loo_evaluate(dataset, arch, bank, config):
    """One train/evaluate iteration per demo id; fold seeds are seed + index."""
    fold_ids = sorted(set(int(d) for d in dataset.demo_ids))
    if len(fold_ids) < 2:
        raise DataError("leave-one-demo-out needs at least 2 demo ids")
    per_fold = []
    setting_scores = {}
    for i, demo in enumerate(fold_ids):
        fold_cfg = replace(config, seed=config.seed + i)
        try:
            splits = split_dataset(dataset, demo, fold_cfg.seed)
            model, curves = train_model(splits, arch, bank, fold_cfg)
        except Exception as exc:
            raise NumericalError(f"fold {demo} failed: {exc}") from exc
        row = [_eval_model(model, splits[name]) for name in EvalReport.SPLIT_NAMES]
        per_fold.append(row)
        gen = splits["generalization"]
        pred = model.predict_batch(gen.inputs, gen.p, gen.u)
        for setting in sorted(set(gen.settings)):
            mask = gen.settings == setting
            if np.var(gen.targets[mask]) <= 0.0:
                continue
            score = float(np.mean([nmse(pred[mask, m], gen.targets[mask, m])
                                   for m in range(gen.n_targets)]))
            setting_scores.setdefault(float(setting), []).append(score)
    per_setting = {k: float(np.mean(v)) for k, v in setting_scores.items()}
    return EvalReport(arch=arch.describe(), fold_ids=fold_ids,
                      per_fold=np.array(per_fold), per_setting=per_setting)


# ---------------------------------------------------------------------------
# dominance analysis

def dominance_analysis(model, dim=0, top=10):
    """Rank regular-hidden-layer features per phase kernel.

    Returns (order, top_mask): order[i] lists feature indices of the i-th
    modulated node sorted by descending |weight|; top_mask flags the first
    `top` of them.
    """
    net = model.nets[dim] if isinstance(model, FeedbackModel) else model
    if not isinstance(net, PmnnParams) or net.n_hidden_layers == 0:
        raise ValidationError("dominance analysis needs a PMNN with a regular hidden layer")
    order = np.argsort(-np.abs(net.mod_weights), axis=1, kind="stable")
    top_mask = np.zeros_like(order, dtype=bool)
    top_mask[:, :top] = True
    return order, top_mask
