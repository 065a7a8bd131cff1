"""Attention-thresholded graph editing and clipped relative positions.

Each GCN layer gets its own edited adjacency: an attention weight at or
above `alpha` forces a directed edge in, one at or below `beta` prunes the
edge, and anything strictly between keeps the original dependency entry.
Self-loops are immune to editing.  Edits are directed; no symmetric
re-closure is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .depgraph import DepGraph
from .errors import ConfigurationError


def _check_thresholds(alpha: float, beta: float) -> None:
    if not (0.0 <= beta < alpha <= 1.0):
        raise ConfigurationError(
            f"thresholds must satisfy 0 <= beta < alpha <= 1, got "
            f"alpha={alpha} beta={beta}"
        )


def supplement(
    adjacency: np.ndarray, attention: np.ndarray, alpha: float, beta: float
) -> np.ndarray:
    """Three-branch edit of one adjacency by one word attention matrix."""
    _check_thresholds(alpha, beta)
    adjacency = np.asarray(adjacency)
    attention = np.asarray(attention)
    if adjacency.shape != attention.shape:
        raise ValueError(
            f"adjacency {adjacency.shape} and attention {attention.shape} disagree"
        )
    out = np.where(attention >= alpha, 1, np.where(attention <= beta, 0, adjacency))
    out = out.astype(np.int8)
    np.fill_diagonal(out, 1)
    return out


@dataclass(frozen=True)
class EdgeEditCounts:
    added: int
    pruned: int


@dataclass(frozen=True, eq=False)
class SupplementedGraph:
    """Per-GCN-layer edited adjacencies plus the unedited original."""

    original: np.ndarray
    per_layer: tuple[np.ndarray, ...]
    alpha: float
    beta: float
    edits: tuple[EdgeEditCounts, ...]

    @property
    def num_layers(self) -> int:
        return len(self.per_layer)


def _count_edits(original: np.ndarray, edited: np.ndarray) -> EdgeEditCounts:
    off_diag = ~np.eye(original.shape[0], dtype=bool)
    added = int(((edited == 1) & (original == 0) & off_diag).sum())
    pruned = int(((edited == 0) & (original == 1)).sum())
    return EdgeEditCounts(added=added, pruned=pruned)


def build_supplemented(
    dep: DepGraph,
    attention_per_layer: Sequence[np.ndarray] | None,
    alpha: float,
    beta: float,
    num_layers: int | None = None,
    use_attention_graph: bool = True,
) -> SupplementedGraph:
    """One edited adjacency per GCN layer; with editing disabled every layer
    is the original dependency adjacency, untouched."""
    _check_thresholds(alpha, beta)
    original = dep.adjacency
    if not use_attention_graph or attention_per_layer is None:
        if num_layers is None:
            if not attention_per_layer:
                raise ConfigurationError(
                    "need num_layers when no attention matrices are given"
                )
            num_layers = len(attention_per_layer)
        per_layer = tuple(original.copy() for _ in range(num_layers))
        edits = tuple(EdgeEditCounts(0, 0) for _ in range(num_layers))
    else:
        per_layer = tuple(
            supplement(original, np.asarray(att), alpha, beta)
            for att in attention_per_layer
        )
        edits = tuple(_count_edits(original, sup) for sup in per_layer)
    return SupplementedGraph(
        original=original, per_layer=per_layer, alpha=alpha, beta=beta, edits=edits
    )


def edge_edits(original: np.ndarray, edited: np.ndarray) -> list[tuple[int, int, str]]:
    """Explicit (i, j, kind) list of directed edits, for inspection output."""
    edits: list[tuple[int, int, str]] = []
    n = original.shape[0]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if edited[i, j] == 1 and original[i, j] == 0:
                edits.append((i, j, "added"))
            elif edited[i, j] == 0 and original[i, j] == 1:
                edits.append((i, j, "pruned"))
    return edits


def position_index(i: int, j: int, w: int) -> int:
    """Clipped relative offset j-i mapped into table rows [0, 2w]."""
    if w < 0:
        raise ConfigurationError(f"position window must be non-negative, got {w}")
    return max(-w, min(w, j - i)) + w


def position_index_matrix(n: int, w: int) -> np.ndarray:
    """(n, n) matrix of table rows; entry [i, j] = position_index(i, j, w)."""
    offsets = np.arange(n)[None, :] - np.arange(n)[:, None]
    return np.clip(offsets, -w, w) + w
