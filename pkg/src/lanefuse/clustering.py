"""Density-based clustering used to fuse pooled lane points.

Standard DBSCAN: a core point has at least min_samples neighbors within
epsilon (itself included); clusters are the maximal density-connected sets;
everything else is noise (label -1). The scan visits points in ascending
index order, so labels are deterministic for a given point ordering.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError

NOISE = -1
_UNVISITED = -2


@dataclass(frozen=True)
class DbscanParams:
    epsilon: float = 0.5  # meters
    min_samples: int = 4

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise InvalidInputError("epsilon must be positive")
        if self.min_samples < 1:
            raise InvalidInputError("min_samples must be >= 1")


def dbscan(points: np.ndarray, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Cluster labels per point; noise points get -1."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise InvalidInputError("points must be a 2-D array")
    n = len(pts)
    labels = np.full(n, _UNVISITED, dtype=int)
    if n == 0:
        return labels

    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, r=params.epsilon)
    is_core = np.array([len(nb) >= params.min_samples for nb in neighborhoods])

    cluster = 0
    for start in range(n):
        if labels[start] != _UNVISITED:
            continue
        if not is_core[start]:
            labels[start] = NOISE
            continue
        labels[start] = cluster
        queue = deque(sorted(neighborhoods[start]))
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster  # border point reached from a core
            if labels[j] != _UNVISITED:
                continue
            labels[j] = cluster
            if is_core[j]:
                queue.extend(sorted(neighborhoods[j]))
        cluster += 1
    return labels


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by their smallest member index; noise stays -1.

    Two label vectors describe the same partition iff their canonical forms
    are equal, regardless of how cluster ids were assigned.
    """
    labels = np.asarray(labels)
    out = np.full(len(labels), NOISE, dtype=int)
    order: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in order:
            order[lab] = len(order)
        out[i] = order[lab]
    return out
