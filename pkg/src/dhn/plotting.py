"""Figures written next to the CSV outputs (headless Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_training_curve(report, path):
    """Train and validation NLL per epoch."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = list(range(1, report.epochs + 1))
    ax.plot([0] + epochs, [report.initial_val_nll] + list(report.val_nll), "o-", label="validation")
    ax.plot(epochs, report.train_nll, "s--", label="train")
    if report.best_epoch > 0:
        ax.axvline(report.best_epoch, color="0.6", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("NLL per row")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_alpha_sweep(sweep, path):
    """zRMSE against the zero-weight alpha."""
    alphas = sorted(sweep)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(alphas, [sweep[a] for a in alphas], "o-")
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel("zRMSE")
    _save(fig, path)
