"""Matplotlib renderings written next to the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import HeatmapReport
from .knowledge import HIGH, LOW, MID

_LEVEL_VALUE = {HIGH: 1.0, MID: 0.5, LOW: 0.0}


def save_heatmap_figure(report: HeatmapReport, path) -> None:
    """Expert importance and model mean influence side by side."""
    scheme = report.importance.scheme
    expert = np.array([[_LEVEL_VALUE[cell] for cell in row]
                       for row in report.importance.levels])
    fig, axes = plt.subplots(1, 2, figsize=(2 + 0.6 * scheme.num_concepts, 2.4 + 0.4 * scheme.num_classes))
    panels = [("expert importance (High=1, Mid=0.5, Low=0)", expert),
              (f"model mean influence ({report.domain_tag}, n={report.n})",
               report.mean_influence)]
    for ax, (title, grid) in zip(axes, panels):
        im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        ax.set_title(title, fontsize=9)
        ax.set_xticks(range(scheme.num_concepts))
        ax.set_xticklabels([c.name for c in scheme.concepts], rotation=90, fontsize=7)
        ax.set_yticks(range(scheme.num_classes))
        ax.set_yticklabels(scheme.class_names, fontsize=7)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(f"alignment score = {report.alignment_score:.4f}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_compare_figure(rows: list[dict], path) -> None:
    """Grouped bars of mean macro F1 with CI error bars.

    ``rows`` are compare-table entries with keys variant, lam, domain,
    mean, ci_half_width.
    """
    groups = sorted({(r["variant"], r["lam"]) for r in rows})
    domains = sorted({r["domain"] for r in rows})
    width = 0.8 / max(len(domains), 1)
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(groups), 3.6))
    xs = np.arange(len(groups))
    for j, domain in enumerate(domains):
        means, halves = [], []
        for g in groups:
            match = [r for r in rows if (r["variant"], r["lam"]) == g and r["domain"] == domain]
            means.append(match[0]["mean"] if match else np.nan)
            halves.append(match[0]["ci_half_width"] if match else 0.0)
        ax.bar(xs + j * width, means, width, yerr=halves, capsize=3, label=domain)
    ax.set_xticks(xs + width * (len(domains) - 1) / 2)
    ax.set_xticklabels([f"{v}\nlam={lam:g}" for v, lam in groups], fontsize=8)
    ax.set_ylabel("macro F1")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_lambda_sweep_figure(rows: list[dict], path) -> None:
    """Macro F1 versus alignment weight, one line per (variant, domain)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    keys = sorted({(r["variant"], r["domain"]) for r in rows})
    for variant, domain in keys:
        pts = sorted([r for r in rows if r["variant"] == variant and r["domain"] == domain],
                     key=lambda r: r["lam"])
        lams = [r["lam"] for r in pts]
        means = np.array([r["mean"] for r in pts])
        halves = np.array([r["ci_half_width"] for r in pts])
        ax.plot(lams, means, marker="o", label=f"{variant} / {domain}")
        ax.fill_between(lams, means - halves, means + halves, alpha=0.2)
    ax.set_xlabel("alignment weight")
    ax.set_ylabel("macro F1")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
