"""Point-cloud and box primitives: sampling, grouping, rotation, views."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    pass


TWO_PI = 2.0 * math.pi


@dataclass
class PointCloud:
    """N x 6 array: xyz in meters, rgb in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 6:
            raise GeometryError(f"point cloud must be (N, 6), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise GeometryError("point cloud must contain at least one point")
        rgb = self.points[:, 3:6]
        if rgb.min() < -1e-9 or rgb.max() > 1.0 + 1e-9:
            raise GeometryError("colors must lie in [0, 1]")

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def rgb(self) -> np.ndarray:
        return self.points[:, 3:6]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Box3D:
    """Axis-yawed box: center (m), positive size (m), yaw in [0, 2*pi)."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0):
            raise GeometryError(f"box size must be positive, got {self.size}")
        self.yaw = float(self.yaw) % TWO_PI


@dataclass
class ObjectProposal:
    """One candidate object: geometry + color points, box, optional GT class."""

    object_id: int
    cloud: PointCloud
    box: Box3D
    class_name: str | None = None


@dataclass
class ViewMeta:
    """Per-view visibility: object id -> number of visible points."""

    view_id: int
    visible: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(c < 0 for c in self.visible.values()):
            raise GeometryError("visible point counts must be >= 0")


def farthest_point_sample(xyz: np.ndarray | PointCloud, k: int, start: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``k`` point indices.

    Each step picks the point maximizing the distance to the chosen set;
    ties break to the lowest index.  Deterministic given ``start``.
    """
    pts = xyz.xyz if isinstance(xyz, PointCloud) else np.asarray(xyz, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise GeometryError(f"k={k} outside [1, {n}]")
    if not 0 <= start < n:
        raise GeometryError(f"start index {start} outside [0, {n})")
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def ball_group(pc: np.ndarray | PointCloud, centers: np.ndarray, radius: float,
               max_neighbors: int) -> list[np.ndarray]:
    """Indices within ``radius`` of each center, nearest first.

    Lists are truncated to ``max_neighbors``; a center with no points in
    range falls back to its single nearest point.
    """
    if radius <= 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    pts = pc.xyz if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    groups: list[np.ndarray] = []
    for c in centers:
        d = np.linalg.norm(pts - c, axis=1)
        order = np.argsort(d, kind="stable")
        in_range = order[d[order] <= radius]
        if in_range.size == 0:
            in_range = order[:1]
        groups.append(in_range[:max_neighbors].astype(np.intp))
    return groups


def rotate_box(b: Box3D, angle: float) -> Box3D:
    """Rotate the box about the scene z-axis at the origin."""
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = b.center
    return Box3D(center=np.array([c * x - s * y, s * x + c * y, z]),
                 size=b.size.copy(), yaw=(b.yaw + angle) % TWO_PI)


def select_view(obj_id: int, views: Sequence[ViewMeta], mode: str = "max_coverage",
                rng: np.random.Generator | None = None) -> int:
    """Pick a view id for an object.

    ``max_coverage`` returns the argmax visible count (ties -> lowest
    view_id); ``random`` draws uniformly among views that see the object,
    falling back to max_coverage when none do.
    """
    if not views:
        raise GeometryError("select_view needs at least one view")
    ordered = sorted(views, key=lambda v: v.view_id)
    if mode == "random":
        if rng is None:
            raise GeometryError("random view selection requires an rng")
        nonzero = [v.view_id for v in ordered if v.visible.get(obj_id, 0) > 0]
        if nonzero:
            return int(nonzero[rng.integers(len(nonzero))])
        mode = "max_coverage"
    if mode != "max_coverage":
        raise GeometryError(f"unknown view selection mode {mode!r}")
    best = max(ordered, key=lambda v: (v.visible.get(obj_id, 0), -v.view_id))
    return best.view_id


def count_distractors(objects: Sequence[ObjectProposal], target_id: int) -> int:
    """Number of other objects sharing the target's class."""
    by_id = {o.object_id: o for o in objects}
    if target_id not in by_id:
        raise GeometryError(f"unknown target id {target_id}")
    target = by_id[target_id]
    if target.class_name is None:
        raise GeometryError(f"target {target_id} has no class label")
    return sum(1 for o in objects
               if o.object_id != target_id and o.class_name == target.class_name)


def synthesize_views(objects: Sequence[ObjectProposal], num_views: int = 12,
                     fov: float = math.pi / 3, bins: int = 48,
                     camera_radius_scale: float = 1.6,
                     camera_height: float = 1.5) -> list[ViewMeta]:
    """Visibility from fixed azimuth cameras ringing the scene.

    Stand-in for real video frames: cameras sit on a circle around the scene
    centroid looking inward.  A point is visible when it falls inside the
    camera's horizontal field of view and its object wins the point's angular
    bin (nearest object per bin, a coarse z-buffer).
    """
    if not objects:
        return [ViewMeta(view_id=v) for v in range(num_views)]
    all_xyz = np.concatenate([o.cloud.xyz for o in objects], axis=0)
    centroid = all_xyz[:, :2].mean(axis=0)
    spread = np.linalg.norm(all_xyz[:, :2] - centroid, axis=1).max()
    cam_r = max(spread * camera_radius_scale, 1.0)

    owner = np.concatenate([np.full(len(o.cloud), o.object_id, dtype=np.intp)
                            for o in objects])
    views: list[ViewMeta] = []
    for v in range(num_views):
        theta = TWO_PI * v / num_views
        cam = np.array([centroid[0] + cam_r * math.cos(theta),
                        centroid[1] + cam_r * math.sin(theta),
                        camera_height])
        look = math.atan2(centroid[1] - cam[1], centroid[0] - cam[0])
        rel = all_xyz - cam
        az = np.arctan2(rel[:, 1], rel[:, 0])
        off = np.angle(np.exp(1j * (az - look)))
        in_fov = np.abs(off) <= fov / 2
        dist = np.linalg.norm(rel, axis=1)

        counts: dict[int, int] = {o.object_id: 0 for o in objects}
        if in_fov.any():
            bin_idx = np.clip(((off + fov / 2) / fov * bins).astype(int), 0, bins - 1)
            # nearest object claims each angular bin; its in-bin points count
            win: dict[int, int] = {}
            best: dict[int, float] = {}
            idxs = np.nonzero(in_fov)[0]
            for i in idxs:
                b = int(bin_idx[i])
                if b not in best or dist[i] < best[b]:
                    best[b] = float(dist[i])
                    win[b] = int(owner[i])
            for i in idxs:
                if win[int(bin_idx[i])] == int(owner[i]):
                    counts[int(owner[i])] += 1
        views.append(ViewMeta(view_id=v, visible=counts))
    return views
