"""Matplotlib rendering of directed code networks and projection scatter plots."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import FancyArrowPatch

from .ona import CodeRegistry, OnaNetwork, Projection

_NODE_COLOR = "#3b6ea5"
_EDGE_COLOR = "#555555"
_GROUP_COLORS = ("#c0392b", "#2980b9")


def _circle_layout(n: int, radius: float = 1.0) -> list:
    return [
        (radius * math.cos(2 * math.pi * i / n + math.pi / 2), radius * math.sin(2 * math.pi * i / n + math.pi / 2))
        for i in range(n)
    ]


def render_network(
    network: OnaNetwork,
    registry: CodeRegistry,
    path: Union[str, Path],
    title: Optional[str] = None,
    min_rel_weight: float = 0.02,
) -> Path:
    """Draw the directed network: node area tracks code frequency, edge width relative weight."""
    path = Path(path)
    codes = list(registry.codes)
    positions = _circle_layout(len(codes))
    max_weight = float(network.adjacency.max()) if network.adjacency.size else 0.0
    max_freq = float(network.code_frequency.max()) if network.code_frequency.size else 0.0

    fig, ax = plt.subplots(figsize=(7.5, 7.5))
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title)

    if max_weight > 0:
        for (ground, response), value in zip(registry.pair_labels(), network.adjacency):
            rel = float(value) / max_weight
            if value == 0.0 or rel < min_rel_weight:
                continue
            gi, ri = registry.index(ground), registry.index(response)
            if gi == ri:
                x, y = positions[gi]
                loop = FancyArrowPatch(
                    (x * 1.02, y * 1.02),
                    (x * 1.14, y * 1.14),
                    arrowstyle="-|>",
                    mutation_scale=8,
                    linewidth=0.5 + 4.0 * rel,
                    color=_EDGE_COLOR,
                    alpha=0.35 + 0.6 * rel,
                    connectionstyle="arc3,rad=1.6",
                )
                ax.add_patch(loop)
                continue
            arrow = FancyArrowPatch(
                positions[gi],
                positions[ri],
                arrowstyle="-|>",
                mutation_scale=10 + 8 * rel,
                linewidth=0.5 + 5.0 * rel,
                color=_EDGE_COLOR,
                alpha=0.3 + 0.65 * rel,
                connectionstyle="arc3,rad=0.12",
                shrinkA=14,
                shrinkB=14,
            )
            ax.add_patch(arrow)

    for code, (x, y) in zip(codes, positions):
        freq = float(network.code_frequency[registry.index(code)])
        rel = freq / max_freq if max_freq else 0.0
        size = 160 + 1400 * rel
        ax.scatter([x], [y], s=size, zorder=3, color=_NODE_COLOR, edgecolors="white", linewidths=1.2)
        label_r = 1.24
        norm = math.hypot(x, y) or 1.0
        ax.annotate(
            code,
            (x / norm * label_r, y / norm * label_r),
            ha="center",
            va="center",
            fontsize=8,
        )

    ax.set_xlim(-1.55, 1.55)
    ax.set_ylim(-1.55, 1.55)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def render_projection(
    projection: Projection,
    path: Union[str, Path],
    title: Optional[str] = None,
) -> Path:
    """Scatter the projected units with group means crossed in."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 5.5))
    for color, (label, units) in zip(_GROUP_COLORS, sorted(projection.groups.items())):
        xs = [projection.points[u][0] for u in units]
        ys = [projection.points[u][1] for u in units]
        ax.scatter(xs, ys, s=30, alpha=0.65, label=label, color=color)
        gx, gy = projection.group_means[label]
        ax.scatter([gx], [gy], s=240, marker="X", color=color, edgecolors="black", zorder=3)
    ax.axhline(0, color="#999999", linewidth=0.6)
    ax.axvline(0, color="#999999", linewidth=0.6)
    ax.set_xlabel("dim 1 (means rotation)")
    ax.set_ylabel("dim 2 (residual)")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path
