"""Figure rendering for the report path.

Everything goes through the Agg backend straight to PNG files next to
the delimited output; no interactive state.  Metadata is stripped so a
rerun writes the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = dict(dpi=100, metadata={"Software": None})


def training_curves_png(history, path: str) -> str:
    """Accuracy curves (clean / FGSM-test / PGD-val) plus loss and lr."""
    epochs = history.column("epoch")
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax.plot(epochs, history.column("clean_test_acc"), label="clean")
    ax.plot(epochs, history.column("fgsm_test_acc"), label="fgsm")
    ax.plot(epochs, history.column("pgd_val_acc"), label="pgd")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="lower left", fontsize=8)
    ax2.plot(epochs, history.column("train_loss"), color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train loss", color="tab:red")
    twin = ax2.twinx()
    twin.plot(epochs, history.column("lr"), color="tab:gray", alpha=0.6)
    twin.set_ylabel("lr", color="tab:gray")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def aliasing_png(report, path: str) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.bar(range(len(report.ratios)), report.ratios)
    ax.set_xticks(range(len(report.ratios)))
    ax.set_xticklabels(report.layer_names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("above-cutoff energy share")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def spectrum_diff_png(report, path: str) -> str:
    """Mean spatial diff next to the log-scaled mean spectrum diff."""
    spatial = report.mean_spatial_diff.mean(axis=0)
    spectrum = np.log1p(np.abs(report.mean_spectrum_diff.mean(axis=0)))
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(7, 3.2))
    im = ax.imshow(spatial, cmap="coolwarm")
    ax.set_title("mean spatial diff", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    im2 = ax2.imshow(spectrum, cmap="magma")
    ax2.set_title("mean |spectrum| diff (log1p, centered)", fontsize=9)
    fig.colorbar(im2, ax=ax2, fraction=0.046)
    for a in (ax, ax2):
        a.set_xticks([])
        a.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def shift_consistency_png(report, path: str) -> str:
    classes = sorted(report.per_class)
    vals = [report.per_class[c] for c in classes]
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.bar([f"class {c}" for c in classes], vals, color="tab:blue")
    ax.axhline(report.consistency, color="k", linestyle="--", linewidth=1,
               label=f"overall {report.consistency:.3f}")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("shift consistency")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
