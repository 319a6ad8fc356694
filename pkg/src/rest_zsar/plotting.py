"""PNG figures for training logs and evaluation reports."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training(history, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [r["epoch"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("loss_total", "loss_cls", "loss_mtl"):
        ax1.plot(epochs, [r[key] for r in history], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r["train_top1"] for r in history])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train top-1")
    ax2.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_report(report, directory):
    """Per-split accuracy bars and the nearest-prototype count histogram."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    idx = [s.split for s in report.splits]
    ax.bar([i - 0.2 for i in idx], [s.top1 for s in report.splits], width=0.4, label="transfer")
    ax.bar([i + 0.2 for i in idx], [s.baseline_top1 for s in report.splits], width=0.4,
           label="seen-label baseline")
    ax.axhline(report.mean_top1, color="k", lw=0.8, ls="--")
    ax.set_xlabel("split")
    ax.set_ylabel("top-1")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    out.append(directory / "split_accuracy.png")
    fig.savefig(out[-1], dpi=100)
    plt.close(fig)

    psi = report.hubness["psi"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(psi)), psi)
    ax.set_xlabel("unseen class")
    ax.set_ylabel(f"times among top-{report.hubness['k']}")
    ax.set_title(f"skewness {report.hubness['skewness']:.3f}")
    fig.tight_layout()
    out.append(directory / "hubness.png")
    fig.savefig(out[-1], dpi=100)
    plt.close(fig)
    return out
