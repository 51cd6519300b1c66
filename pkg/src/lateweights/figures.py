"""Figure rendering for the simulation report path.

Renders the two standard views of a Monte Carlo cell next to its CSV
exports: a box plot of the seven complier-share estimators and a histogram
grid of the per-replication point estimates.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulation import SHARE_COLUMNS, McSummary  # noqa: E402

_PNG_METADATA = {"Software": "lateweights"}

_SHARE_LABELS = {
    "iv_first_stage": "IV first stage",
    "hajek_denom_ml": "self-norm. denom (logit)",
    "kappa1_ml": "mean kappa1 (logit)",
    "kappa0_ml": "mean kappa0 (logit)",
    "kappa_ml": "mean kappa (logit)",
    "cb_denom": "self-norm. denom (balancing)",
    "kappa1_cb": "mean kappa1 (balancing)",
    "kappa0_cb": "mean kappa0 (balancing)",
}


def _cell_title(summary: McSummary) -> str:
    return (f"Design {summary.design}, delta={summary.delta:g}, "
            f"N={summary.n}, reps={summary.reps}")


def render_shares_boxplot(summary: McSummary, path) -> None:
    """Box plot of the per-replication complier-share estimates."""
    data = []
    labels = []
    for col in SHARE_COLUMNS:
        v = summary.shares[col]
        data.append(v[np.isfinite(v)])
        labels.append(_SHARE_LABELS[col])
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.boxplot(data, tick_labels=labels, flierprops={"markersize": 2})
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_ylabel("estimated proportion of compliers")
    ax.set_title(_cell_title(summary))
    plt.setp(ax.get_xticklabels(), rotation=25, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def render_estimates_hist(summary: McSummary, path, bins: int = 60) -> None:
    """Histogram grid of the point estimates, one panel per estimator."""
    kinds = summary.kinds
    ncol = 4
    nrow = (len(kinds) + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(3.2 * ncol, 2.6 * nrow),
                             squeeze=False)
    for i, kind in enumerate(kinds):
        ax = axes[i // ncol][i % ncol]
        v = summary.estimates[kind]
        v = v[np.isfinite(v)]
        if v.size:
            ax.hist(v, bins=bins, color="steelblue")
        ax.axvline(summary.true_late, color="crimson", lw=1.0)
        ax.set_title(kind, fontsize=9)
    for j in range(len(kinds), nrow * ncol):
        axes[j // ncol][j % ncol].set_axis_off()
    fig.suptitle(_cell_title(summary), fontsize=10)
    fig.tight_layout(rect=(0, 0, 1, 0.96))
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
