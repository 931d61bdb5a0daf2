"""Confidence-driven map selection, fusion, and the map-modification tasks.

Local maps are ranked by average image confidence; the fusion set is the
rank prefix whose averages stay within 10% of the best map. Selected maps
are ICP-aligned onto the modified map, their lane points pooled with the
modified map's own points, density-clustered, and each cluster condensed
back into a polyline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .clustering import NOISE, DbscanParams, dbscan
from .errors import (
    DegenerateGeometryError,
    EmptyFusionError,
    EmptyInputError,
    InvalidInputError,
    LaneNotFoundError,
)
from .mapmodel import LaneLine, LinkArea, LocalMap, Point3, average_confidence
from .registration import IcpParams, apply_transform, icp_align

BAND_FRACTION = 0.1  # band lower bound sits 10% below the best average
BIN_LENGTH = 1.0  # meters along the cluster axis per emitted polyline point


@dataclass(frozen=True)
class SelectionResult:
    ranked_map_ids: tuple[str, ...]
    selected_map_ids: tuple[str, ...]
    c_best: float
    lower_bound: float

    def __post_init__(self):
        object.__setattr__(self, "ranked_map_ids", tuple(self.ranked_map_ids))
        object.__setattr__(self, "selected_map_ids", tuple(self.selected_map_ids))
        prefix = self.ranked_map_ids[: len(self.selected_map_ids)]
        if prefix != self.selected_map_ids:
            raise InvalidInputError("selected maps must be a prefix of the ranking")


def rank_maps(area: LinkArea) -> list[tuple[str, float]]:
    """(map_id, average confidence) sorted best-first; ties by map_id."""
    if not area.local_maps:
        raise EmptyInputError(f"link area {area.link_id!r} has no local maps")
    scored = [(m.map_id, average_confidence(m)) for m in area.local_maps]
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


def select_band(
    ranked: list[tuple[str, float]], k_cap: int | None = None
) -> SelectionResult:
    """Keep the maps whose average sits within 10% of the best one.

    The best map always survives; k_cap (when given) truncates the band to
    the top k entries.
    """
    if not ranked:
        raise EmptyInputError("cannot select from an empty ranking")
    if k_cap is not None and k_cap < 1:
        raise InvalidInputError("k_cap must be >= 1")
    c_best = ranked[0][1]
    lower = c_best - BAND_FRACTION * c_best
    selected = [map_id for map_id, avg in ranked if avg >= lower]
    if k_cap is not None:
        selected = selected[:k_cap]
    return SelectionResult(
        ranked_map_ids=tuple(map_id for map_id, _ in ranked),
        selected_map_ids=tuple(selected),
        c_best=c_best,
        lower_bound=lower,
    )


# --- modification tasks -----------------------------------------------------


def _require_lane(local_map: LocalMap, lane_id: str) -> LaneLine:
    lane = local_map.lane(lane_id)
    if lane is None:
        raise LaneNotFoundError(f"map {local_map.map_id!r} has no lane {lane_id!r}")
    return lane


def modify_shift(local_map: LocalMap, lane_id: str, dx: float, dy: float) -> LocalMap:
    """Replace the named lane with a copy offset by (dx, dy, 0)."""
    _require_lane(local_map, lane_id)
    lanes = []
    for lane in local_map.lane_lines:
        if lane.lane_id == lane_id:
            pts = [Point3(p.x + dx, p.y + dy, p.z) for p in lane.points]
            lanes.append(LaneLine(lane_id=lane.lane_id, points=pts))
        else:
            lanes.append(lane)
    return replace(local_map, lane_lines=lanes)


def modify_delete(local_map: LocalMap, lane_id: str) -> LocalMap:
    """Remove the named lane; every other lane is untouched."""
    _require_lane(local_map, lane_id)
    lanes = [lane for lane in local_map.lane_lines if lane.lane_id != lane_id]
    return replace(local_map, lane_lines=lanes)


def resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """Resample to ``count`` points uniformly spaced by arc length.

    Endpoints are preserved exactly.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise InvalidInputError("polyline needs >= 2 points")
    if count < 2:
        raise InvalidInputError("resample count must be >= 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], count)
    return np.column_stack([np.interp(targets, s, pts[:, k]) for k in range(pts.shape[1])])


def _unique_lane_id(local_map: LocalMap, base: str) -> str:
    existing = {lane.lane_id for lane in local_map.lane_lines}
    if base not in existing:
        return base
    n = 2
    while f"{base}_{n}" in existing:
        n += 1
    return f"{base}_{n}"


def modify_add(
    local_map: LocalMap, lane_a: str, lane_b: str, offset: float = 0.0
) -> LocalMap:
    """Insert a new lane midway between two existing ones.

    Both parents are resampled by arc length to the larger point count, the
    paired midpoints form the new lane, and ``offset`` displaces it along the
    local perpendicular in the xy-plane (left of the travel direction).
    """
    a = _require_lane(local_map, lane_a)
    b = _require_lane(local_map, lane_b)
    pts_a = a.points_array()
    pts_b = b.points_array()
    count = max(len(pts_a), len(pts_b))
    pts_a = resample_polyline(pts_a, count)
    pts_b = resample_polyline(pts_b, count)
    if offset == 0.0 and float(np.max(np.linalg.norm(pts_a - pts_b, axis=1))) < 1e-9:
        raise DegenerateGeometryError(
            f"lanes {lane_a!r} and {lane_b!r} coincide and offset is 0; "
            "the added lane would duplicate them"
        )
    mid = 0.5 * (pts_a + pts_b)
    if offset != 0.0:
        # Central-difference tangents in the xy-plane, rotated +90 degrees.
        tangents = np.gradient(mid[:, :2], axis=0)
        norms = np.linalg.norm(tangents, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise DegenerateGeometryError("midpoint lane has a zero-length tangent")
        tangents /= norms
        normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
        mid = mid.copy()
        mid[:, :2] += offset * normals
    lane_id = _unique_lane_id(local_map, f"add_{lane_a}_{lane_b}")
    new_lane = LaneLine(lane_id=lane_id, points=[Point3(*row) for row in mid])
    return replace(local_map, lane_lines=local_map.lane_lines + [new_lane])


# --- fusion -----------------------------------------------------------------


def _principal_axis_xy(points: np.ndarray) -> np.ndarray:
    """Dominant direction of a point cluster in the xy-plane, sign-fixed."""
    xy = points[:, :2] - points[:, :2].mean(axis=0)
    cov = xy.T @ xy
    eigvals, eigvecs = np.linalg.eigh(cov)
    axis = eigvecs[:, int(np.argmax(eigvals))]
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return axis


def cluster_polyline(points: np.ndarray, bin_length: float = BIN_LENGTH) -> np.ndarray:
    """Condense one cluster into a polyline.

    Points are projected onto the cluster's principal axis, grouped into
    fixed-length bins along it, and each bin contributes its 3D centroid,
    ordered along the axis. Clusters shorter than two bins give fewer than
    two points and should be discarded by the caller.
    """
    pts = np.asarray(points, dtype=float)
    axis = _principal_axis_xy(pts)
    coords = pts[:, :2] @ axis
    bins = np.floor((coords - coords.min()) / bin_length).astype(int)
    centroids = [pts[bins == b].mean(axis=0) for b in np.unique(bins)]
    return np.asarray(centroids)


def fuse_maps(
    selected: list[LocalMap],
    modified: LocalMap,
    dparams: DbscanParams = DbscanParams(),
    iparams: IcpParams = IcpParams(),
) -> LocalMap:
    """Align the selected maps onto the modified map and fuse the geometry.

    Every selected map is ICP-aligned to the modified map's points; the
    aligned points and the modified map's own points are pooled, DBSCAN
    groups them into lane clusters (noise dropped), and each cluster is
    condensed to a polyline.
    """
    if not selected:
        raise EmptyInputError("fusion needs at least one selected map")
    target = modified.lane_points()
    pools = [target] if len(target) else []
    for local_map in selected:
        source = local_map.lane_points()
        if len(source) == 0:
            continue
        result = icp_align(source, target, iparams)
        pools.append(apply_transform(result.transform, local_map).lane_points())
    if not pools:
        raise EmptyFusionError("no lane points to fuse")
    pooled = np.vstack(pools)
    if len(pooled) == 0:
        raise EmptyFusionError("no lane points to fuse")

    labels = dbscan(pooled, dparams)
    lanes: list[LaneLine] = []
    index = 0
    for cluster_id in sorted(set(labels) - {NOISE}):
        polyline = cluster_polyline(pooled[labels == cluster_id])
        if len(polyline) < 2:
            continue
        lanes.append(
            LaneLine(
                lane_id=f"fused_{index:03d}",
                points=[Point3(*row) for row in polyline],
            )
        )
        index += 1
    if not lanes:
        raise EmptyFusionError("clustering left no lane-sized groups")
    return LocalMap(
        map_id=f"fused_{modified.map_id}",
        link_area_id=modified.link_area_id,
        lane_lines=lanes,
        images=[],
    )
