"""Figure rendering for the command-line reports.

Every function writes one PNG next to the CSV/JSON it illustrates. The
Agg backend is forced and no wall-clock metadata is embedded, so the
files are byte-reproducible for a fixed input.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata={"Software": "reloc"})
    plt.close(fig)


def error_histograms(rotation_errors_deg, translation_errors_m, path):
    """Side-by-side histograms of per-frame pose errors."""
    rot = np.asarray(rotation_errors_deg, float)
    trans = np.asarray(translation_errors_m, float)
    fig, (ax_r, ax_t) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_r.hist(rot[np.isfinite(rot)], bins=20, color="steelblue")
    ax_r.set_xlabel("rotation error (deg)")
    ax_r.set_ylabel("frames")
    ax_t.hist(trans[np.isfinite(trans)], bins=20, color="darkorange")
    ax_t.set_xlabel("translation error (m)")
    fig.tight_layout()
    _save(fig, path)


def roc_figure(curve, path):
    """ROC curve with the chance diagonal and the AUC in the legend."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(curve.fpr, curve.tpr, color="steelblue",
            label=f"AUC = {curve.auc:.3f}")
    ax.plot([0, 1], [0, 1], ls="--", color="gray", label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def ablation_figure(rows, path):
    """Grouped bars of median errors per variant and hypothesis count."""
    labels = [f"{r.variant}\nh_p={r.h_p}" for r in rows]
    x = np.arange(len(rows))
    rot = [r.median_rotation_deg for r in rows]
    trans = [r.median_translation_m for r in rows]
    fig, (ax_r, ax_t) = plt.subplots(2, 1, figsize=(1.4 * len(rows) + 2, 6),
                                     sharex=True)
    ax_r.bar(x, rot, color="steelblue")
    ax_r.set_ylabel("median rotation (deg)")
    ax_t.bar(x, trans, color="darkorange")
    ax_t.set_ylabel("median translation (m)")
    ax_t.set_xticks(x)
    ax_t.set_xticklabels(labels, fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def training_curve(history, path):
    """Per-epoch mean training loss."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.asarray(history, float), color="steelblue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    fig.tight_layout()
    _save(fig, path)
