"""Static SVG figures for coordinates, layer searches and perplexity curves."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # type: ignore[import-not-found]  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import DOMAIN_ORDER, CulturalCoordinate, DomainShiftMatrix, HumanAnchors  # noqa: E402
from .steering import LayerSearchReport  # noqa: E402

# Fixed ids and no timestamps, so identical inputs give identical files.
matplotlib.rcParams["svg.hashsalt"] = "culturesteer"
_SVG_METADATA = {"Date": None}


def _save(fig, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    return out


def plot_cultural_map(
    coords: Sequence[CulturalCoordinate],
    path: str | Path,
    anchors: HumanAnchors | None = None,
    arrows: Iterable[tuple[CulturalCoordinate, CulturalCoordinate]] = (),
) -> Path:
    """Scatter of model coordinates, anchor countries and steering arrows."""

    fig, ax = plt.subplots(figsize=(7, 6))
    if anchors is not None:
        for country, (x, y) in sorted(anchors.coords.items()):
            ax.scatter([x], [y], marker="s", color="grey")
            ax.annotate(country, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8, color="grey")
    for coord in coords:
        ax.scatter([coord.x], [coord.y], marker="o")
        ax.annotate(coord.label or "model", (coord.x, coord.y), textcoords="offset points", xytext=(4, -10), fontsize=8)
    for start, end in arrows:
        ax.annotate(
            "",
            xy=(end.x, end.y),
            xytext=(start.x, start.y),
            arrowprops={"arrowstyle": "->", "color": "tab:red"},
        )
    ax.axhline(0, color="black", linewidth=0.5)
    ax.axvline(0, color="black", linewidth=0.5)
    ax.set_xlabel("Survival vs. Self-Expression")
    ax.set_ylabel("Traditional vs. Secular-Rational")
    ax.set_title("Cultural map")
    ax.grid(True, linestyle="--", linewidth=0.5, alpha=0.5)
    return _save(fig, path)


def plot_perplexity_curve(curve: Sequence[tuple[float, float]], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    alphas = [a for a, _ in curve]
    values = [v for _, v in curve]
    ax.plot(alphas, values, marker="o")
    ax.set_xlabel("alpha")
    ax.set_ylabel("mean perplexity")
    ax.set_title(title or "Perplexity under steering")
    ax.grid(True, linestyle="--", linewidth=0.5, alpha=0.5)
    return _save(fig, path)


def plot_layer_heatmap(report: LayerSearchReport, path: str | Path) -> Path:
    """Layer x question differential grid; selected layers are starred."""

    layers = sorted({layer for layer, _ in report.cells})
    qids = sorted({qid for _, qid in report.cells})
    grid = np.array([[report.cells.get((layer, qid), np.nan) for qid in qids] for layer in layers])
    bound = float(np.nanmax(np.abs(grid))) if grid.size and np.any(np.isfinite(grid)) else 1.0
    bound = bound or 1.0

    fig, ax = plt.subplots(figsize=(1 + 0.6 * max(len(qids), 1), 1 + 0.4 * max(len(layers), 1)))
    image = ax.imshow(grid, cmap="RdBu_r", vmin=-bound, vmax=bound, aspect="auto")
    ax.set_xticks(range(len(qids)))
    ax.set_xticklabels(qids)
    ax.set_yticks(range(len(layers)))
    ax.set_yticklabels([f"{layer}*" if layer in report.selected else str(layer) for layer in layers])
    ax.set_xlabel("question")
    ax.set_ylabel("layer")
    ax.set_title(f"Steering differential (alpha={report.alpha:g})")
    fig.colorbar(image, ax=ax)
    return _save(fig, path)


def plot_domain_heatmap(matrix: DomainShiftMatrix, path: str | Path) -> Path:
    """Two panels (dx, dy); rows are source domains, columns target domains."""

    names = [d.value for d in DOMAIN_ORDER]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for index, (ax, label) in enumerate(zip(axes, ("dx", "dy"))):
        grid = np.array([[matrix.cells[(s, t)][index] for t in DOMAIN_ORDER] for s in DOMAIN_ORDER])
        bound = float(np.max(np.abs(grid))) or 1.0
        image = ax.imshow(grid, cmap="RdBu_r", vmin=-bound, vmax=bound)
        for row in range(3):
            for col in range(3):
                ax.text(col, row, f"{grid[row, col]:.3f}", ha="center", va="center", fontsize=8)
        ax.set_xticks(range(3))
        ax.set_xticklabels(names)
        ax.set_yticks(range(3))
        ax.set_yticklabels(names)
        ax.set_xlabel("target domain")
        ax.set_ylabel("source domain")
        ax.set_title(f"{label} (steer {matrix.axis_steered.value}, alpha={matrix.alpha:g})")
        fig.colorbar(image, ax=ax)
    return _save(fig, path)


__all__ = [
    "plot_cultural_map",
    "plot_perplexity_curve",
    "plot_layer_heatmap",
    "plot_domain_heatmap",
]
