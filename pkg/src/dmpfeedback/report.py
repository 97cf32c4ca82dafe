"""Figure rendering for the CLI report paths.

Every plotting command also emits its underlying data as CSV/JSON; these
figures are rendered next to those files for quick inspection.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_learning_curves(path, curves, title="training curves"):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, label in (("train", "training"), ("validation", "validation"),
                        ("test", "testing"), ("generalization", "generalization")):
        ax.plot(curves["step"], curves[name], label=label)
    ax.set_xlabel("training step")
    ax.set_ylabel("NMSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_report_bars(path, reports, title="leave-one-demo-out NMSE"):
    """Grouped mean +- std bars, one group per report (architecture/stage)."""
    names = list(reports)
    splits = ("train", "validation", "test", "generalization")
    width = 0.8 / len(names)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    xs = np.arange(len(splits))
    for i, name in enumerate(names):
        rep = reports[name]
        ax.bar(xs + i * width, rep.mean, width, yerr=rep.std, capsize=3, label=name)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(splits)
    ax.set_ylabel("NMSE")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_unroll_figure(path, result, electrode=None, title=None):
    """Coupling over time (top) and one electrode's deviation (bottom)."""
    t = result.record.orientation.t
    if electrode is None:
        electrode = int(np.argmax(np.abs(result.deviations).max(axis=0)))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.5, 6), sharex=True)
    for m in range(result.coupling.shape[1]):
        ax1.plot(t, result.coupling[:, m], label=f"coupling dim {m + 1}")
    for _, hi in result.stage_bounds[:-1]:
        for ax in (ax1, ax2):
            ax.axvline(t[hi], color="k", ls=":", lw=0.8)
    ax1.set_ylabel("coupling (rad)")
    ax1.legend(loc="upper left")
    ax1.grid(True, alpha=0.3)
    if title:
        ax1.set_title(title)
    ax2.plot(t, result.deviations[:, electrode], color="tab:red")
    ax2.set_ylabel(f"deviation, electrode {electrode + 1}")
    ax2.set_xlabel("time (s)")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_dominance_heatmap(path, mod_weights, top_mask, title="dominant features per phase kernel"):
    fig, ax = plt.subplots(figsize=(8, 4.5))
    shown = np.where(top_mask_sorted_back(top_mask, mod_weights), 1.0, 0.0)
    ax.imshow(shown, aspect="auto", cmap="cividis", interpolation="nearest")
    ax.set_xlabel("regular hidden layer feature")
    ax.set_ylabel("phase kernel")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def top_mask_sorted_back(top_mask, mod_weights):
    """Scatter a rank-ordered top mask back onto feature columns."""
    order = np.argsort(-np.abs(mod_weights), axis=1, kind="stable")
    out = np.zeros_like(top_mask)
    for i in range(order.shape[0]):
        out[i, order[i]] = top_mask[i]
    return out
