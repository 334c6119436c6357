"""Matplotlib figures for exposure tables."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import CATEGORIES, AdCategory  # noqa: E402
from .report import CATEGORY_COLORS, GROUPING_TITLES  # noqa: E402

FONTSIZE = 9

UNHEALTHY = (AdCategory.FOOD, AdCategory.ALCOHOL, AdCategory.GAMBLING)


def init_style():
    matplotlib.rcParams.update(
        {
            "font.size": FONTSIZE,
            "axes.titlesize": FONTSIZE + 1,
            "axes.labelsize": FONTSIZE,
            "xtick.labelsize": FONTSIZE - 1,
            "ytick.labelsize": FONTSIZE - 1,
            "legend.fontsize": FONTSIZE - 1,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "savefig.dpi": 150,
            "svg.hashsalt": "adscan",
        }
    )


def exposure_figure(table, path, value="image_pct"):
    """Three panels: image totals per group, unhealthy-category percentages, 'other' percentage."""
    init_style()
    groups = [str(r.group) for r in table.rows]
    x = np.arange(len(groups))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))

    ax = axes[0]
    ax.bar(x, [r.image_total for r in table.rows], color="#1b9e77")
    ax.set_title("Street-level images per group")
    ax.set_ylabel("images")

    ax = axes[1]
    w = 0.8 / len(UNHEALTHY)
    for i, c in enumerate(UNHEALTHY):
        ax.bar(x + (i - 1) * w, [getattr(r, value)[c] for r in table.rows], w, label=c.title, color=CATEGORY_COLORS[c])
    ax.set_title("Unhealthy advertisements")
    ax.set_ylabel("%")
    ax.legend(frameon=False)

    ax = axes[2]
    ax.bar(x, [getattr(r, value)[AdCategory.OTHER] for r in table.rows], color=CATEGORY_COLORS[AdCategory.OTHER])
    ax.set_title("Other advertisements")
    ax.set_ylabel("%")

    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(groups, rotation=90 if len(groups) > 10 else 0)
        ax.set_xlabel(GROUPING_TITLES.get(table.group_key, table.group_key))
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def category_totals_figure(counts: dict, path):
    init_style()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([c.title for c in CATEGORIES], [counts.get(c, 0) for c in CATEGORIES],
           color=[CATEGORY_COLORS[c] for c in CATEGORIES])
    ax.set_ylabel("advertisements")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
