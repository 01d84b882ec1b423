"""Dual-branch hierarchical point-cloud encoder with 2D-teacher fusion.

A shared Set Abstraction trunk feeds two parallel branches: a pure-geometry
branch producing f_p and a teacher-fused branch producing f_m.  The object
feature handed downstream is f_o = f_p + f_m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import DiffArray, MlpSpec
from .geometry import (GeometryError, ObjectProposal, PointCloud, ball_group,
                       farthest_point_sample)


class EncoderError(ValueError):
    pass


IN_FEATS = 3  # entry features are the rgb channels; xyz rides along as coords


@dataclass(frozen=True)
class SALayerSpec:
    """One Set Abstraction layer.  num_seeds == 0 means global pooling."""

    num_seeds: int
    radius: float
    max_neighbors: int
    widths: tuple[int, ...]

    def __post_init__(self):
        if self.num_seeds < 0:
            raise EncoderError("num_seeds must be >= 0")
        if self.num_seeds > 0 and (self.radius <= 0 or self.max_neighbors < 1):
            raise EncoderError("grouping layers need radius > 0 and max_neighbors >= 1")
        if not self.widths or any(w <= 0 for w in self.widths):
            raise EncoderError(f"widths must be positive, got {self.widths}")


@dataclass(frozen=True)
class EncoderConfig:
    """Layer widths, fusion depth, and sampling size of the point encoder.

    fuse_layer_index is 1-based: the fused branch adds the projected teacher
    vector to its input features right before running layer i; layers < i
    are shared between the branches.
    """

    points_per_object: int
    layers: tuple[SALayerSpec, ...]
    fuse_layer_index: int
    d_teacher: int
    out_dim: int

    def __post_init__(self):
        if self.points_per_object < 1:
            raise EncoderError("points_per_object must be >= 1")
        if not self.layers:
            raise EncoderError("need at least one SA layer")
        if not 1 <= self.fuse_layer_index <= len(self.layers):
            raise EncoderError(
                f"fuse_layer_index {self.fuse_layer_index} outside "
                f"[1, {len(self.layers)}]")
        if self.d_teacher < 1 or self.out_dim < 1:
            raise EncoderError("d_teacher and out_dim must be positive")
        for spec in self.layers[:-1]:
            if spec.num_seeds == 0:
                raise EncoderError("only the final SA layer may pool globally")
        if self.layers[-1].num_seeds != 0:
            raise EncoderError("final SA layer must pool globally (num_seeds=0)")
        if self.layers[-1].widths[-1] != self.out_dim:
            raise EncoderError(
                f"final layer width {self.layers[-1].widths[-1]} != out_dim "
                f"{self.out_dim}")

    @property
    def num_sa_layers(self) -> int:
        return len(self.layers)

    def width_in(self, layer_index: int) -> int:
        """Feature width entering 1-based layer ``layer_index``."""
        if layer_index == 1:
            return IN_FEATS
        return self.layers[layer_index - 2].widths[-1]

    @property
    def teacher_proj_dim(self) -> int:
        return self.width_in(self.fuse_layer_index)

    @staticmethod
    def desk(d_teacher: int = 32) -> "EncoderConfig":
        return EncoderConfig(
            points_per_object=128,
            layers=(SALayerSpec(32, 0.35, 16, (32, 32)),
                    SALayerSpec(0, 0.0, 0, (64, 64))),
            fuse_layer_index=2,
            d_teacher=d_teacher,
            out_dim=64,
        )

    @staticmethod
    def paper(d_teacher: int = 512) -> "EncoderConfig":
        return EncoderConfig(
            points_per_object=1024,
            layers=(SALayerSpec(256, 0.2, 32, (64, 64, 128)),
                    SALayerSpec(64, 0.4, 32, (128, 128, 256)),
                    SALayerSpec(0, 0.0, 0, (256, 512, 768))),
            fuse_layer_index=3,
            d_teacher=d_teacher,
            out_dim=768,
        )


@dataclass
class ObjectEncoding:
    f_p: DiffArray  # (1, out_dim) geometry branch
    f_m: DiffArray  # (1, out_dim) teacher-enhanced branch
    f_o: DiffArray = field(init=False)  # f_p + f_m

    def __post_init__(self):
        self.f_o = nm.add(self.f_p, self.f_m)


def _mlp_spec(spec: SALayerSpec) -> MlpSpec:
    return MlpSpec(spec.widths, activation="relu", bias=True)


def init_encoder(cfg: EncoderConfig, num_classes: int,
                 rng: np.random.Generator, prefix: str = "enc"
                 ) -> dict[str, DiffArray]:
    params: dict[str, DiffArray] = {}
    split = cfg.fuse_layer_index - 1
    for i, spec in enumerate(cfg.layers):
        in_dim = cfg.width_in(i + 1) + 3  # relative xyz rides along
        if i < split:
            params.update(nm.init_mlp(_mlp_spec(spec), in_dim, rng,
                                      prefix=f"{prefix}.shared{i}"))
        else:
            params.update(nm.init_mlp(_mlp_spec(spec), in_dim, rng,
                                      prefix=f"{prefix}.p{i}"))
            params.update(nm.init_mlp(_mlp_spec(spec), in_dim, rng,
                                      prefix=f"{prefix}.m{i}"))
    params.update(nm.init_mlp(MlpSpec((cfg.teacher_proj_dim,), "none"),
                              cfg.d_teacher, rng, prefix=f"{prefix}.teacher_proj"))
    if num_classes < 1:
        raise EncoderError("num_classes must be >= 1")
    params.update(nm.init_mlp(MlpSpec((num_classes,), "none"), cfg.out_dim,
                              rng, prefix=f"{prefix}.obj_head"))
    return params


def canonical_start(xyz: np.ndarray) -> int:
    """Lexicographically smallest point; permutation-stable FPS anchor."""
    return int(np.lexsort((xyz[:, 2], xyz[:, 1], xyz[:, 0]))[0])


def set_abstraction(xyz: np.ndarray, feats: DiffArray, spec: SALayerSpec,
                    params: dict[str, DiffArray], prefix: str
                    ) -> tuple[np.ndarray, DiffArray]:
    """FPS seeds, ball grouping, per-point MLP, per-group max-pool.

    A spec with num_seeds == 0 pools every point into one global feature
    centered on the cloud centroid.
    """
    n = xyz.shape[0]
    if feats.shape[0] != n:
        raise EncoderError(f"feats rows {feats.shape[0]} != point count {n}")
    mlp = _mlp_spec(spec)
    if spec.num_seeds == 0:
        center = xyz.mean(axis=0, keepdims=True)
        inp = nm.concat([feats, nm.as_diff(xyz - center)], axis=1)
        h = nm.mlp_forward(inp, mlp, params, prefix=prefix)
        return center, nm.max_(h, axis=0, keepdims=True)
    if spec.num_seeds > n:
        raise EncoderError(f"num_seeds {spec.num_seeds} exceeds point count {n}")
    seeds = farthest_point_sample(xyz, spec.num_seeds, start=canonical_start(xyz))
    centers = xyz[seeds]
    groups = ball_group(xyz, centers, spec.radius, spec.max_neighbors)
    # pad short groups by repeating the nearest point; max-pool ignores dupes
    m = spec.max_neighbors
    idx = np.stack([np.resize(g, m) if g.size < m else g for g in groups])
    flat = idx.reshape(-1)
    gathered = nm.take_rows(feats, flat)
    rel = xyz[flat] - np.repeat(centers, m, axis=0)
    inp = nm.concat([gathered, nm.as_diff(rel)], axis=1)
    h = nm.mlp_forward(inp, mlp, params, prefix=prefix)
    h3 = nm.reshape(h, (spec.num_seeds, m, h.shape[1]))
    return centers, nm.max_(h3, axis=1)


def fuse_teacher(feats: DiffArray, teacher_vec, params: dict[str, DiffArray],
                 prefix: str = "enc.teacher_proj") -> DiffArray:
    """Broadcast-add the linearly projected teacher vector to every row."""
    t = nm.as_diff(teacher_vec)
    if t.ndim == 1:
        t = nm.reshape(t, (1, -1))
    proj = nm.mlp_forward(t, MlpSpec((params[f"{prefix}.w0"].shape[1],), "none"),
                          params, prefix=prefix)
    if proj.shape[1] != feats.shape[1]:
        raise EncoderError(
            f"projected teacher width {proj.shape[1]} != feature width "
            f"{feats.shape[1]}")
    return nm.add(feats, proj)


def resample_points(points: np.ndarray, k: int,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniformly resample an (N, 6) array to exactly k rows.

    N == k is the identity; otherwise draws are seeded and uniform, with
    replacement only when fewer points than k exist.
    """
    n = points.shape[0]
    if n == k:
        return points
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.choice(n, size=k, replace=n < k)
    return points[idx]


def encode_object(obj: ObjectProposal | PointCloud | np.ndarray,
                  cfg: EncoderConfig, params: dict[str, DiffArray],
                  teacher_vec: np.ndarray | None = None,
                  rng: np.random.Generator | None = None,
                  prefix: str = "enc") -> ObjectEncoding:
    """Run both encoder branches over one object's point cloud.

    teacher_vec None leaves the fused branch unfused (inference mode).
    The cloud is centered at its centroid, so encodings are translation
    invariant; absolute placement is the interaction module's concern.
    """
    if isinstance(obj, ObjectProposal):
        cloud = obj.cloud
    elif isinstance(obj, PointCloud):
        cloud = obj
    else:
        cloud = PointCloud(np.asarray(obj))
    pts = resample_points(cloud.points, cfg.points_per_object, rng)
    xyz = pts[:, :3] - pts[:, :3].mean(axis=0)
    feats = nm.as_diff(pts[:, 3:6])

    split = cfg.fuse_layer_index - 1
    for i in range(split):
        xyz, feats = set_abstraction(xyz, feats, cfg.layers[i], params,
                                     prefix=f"{prefix}.shared{i}")

    xyz_p, feats_p = xyz, feats
    for i in range(split, cfg.num_sa_layers):
        xyz_p, feats_p = set_abstraction(xyz_p, feats_p, cfg.layers[i], params,
                                         prefix=f"{prefix}.p{i}")

    xyz_m = xyz
    feats_m = feats if teacher_vec is None else fuse_teacher(
        feats, teacher_vec, params, prefix=f"{prefix}.teacher_proj")
    for i in range(split, cfg.num_sa_layers):
        xyz_m, feats_m = set_abstraction(xyz_m, feats_m, cfg.layers[i], params,
                                         prefix=f"{prefix}.m{i}")

    return ObjectEncoding(f_p=feats_p, f_m=feats_m)


def classify_object(f_o: DiffArray, params: dict[str, DiffArray],
                    prefix: str = "enc.obj_head") -> DiffArray:
    """Class logits for the fused object feature; feeds the L_of term."""
    num_classes = params[f"{prefix}.w0"].shape[1]
    return nm.mlp_forward(f_o, MlpSpec((num_classes,), "none"), params,
                          prefix=prefix)


# -- batched path -----------------------------------------------------------

def _batched_layer(xyz: np.ndarray, feats: DiffArray, spec: SALayerSpec,
                   params: dict[str, DiffArray], prefix: str
                   ) -> tuple[np.ndarray, DiffArray]:
    """One SA layer over a batch.  xyz is (B, n, 3); feats is (B*n, C) with
    rows grouped by object.  Matches set_abstraction object by object."""
    b, n = xyz.shape[:2]
    mlp = _mlp_spec(spec)
    if spec.num_seeds == 0:
        centers = xyz.mean(axis=1, keepdims=True)
        rel = (xyz - centers).reshape(-1, 3)
        h = nm.mlp_forward(nm.concat([feats, nm.as_diff(rel)], axis=1),
                           mlp, params, prefix=prefix)
        pooled = nm.max_(nm.reshape(h, (b, n, h.shape[1])), axis=1)
        return centers, pooled
    if spec.num_seeds > n:
        raise EncoderError(f"num_seeds {spec.num_seeds} exceeds point count {n}")
    k, m = spec.num_seeds, spec.max_neighbors
    centers = np.empty((b, k, 3))
    idx = np.empty((b, k, m), dtype=np.intp)
    for i in range(b):
        seeds = farthest_point_sample(xyz[i], k, start=canonical_start(xyz[i]))
        centers[i] = xyz[i][seeds]
        groups = ball_group(xyz[i], centers[i], spec.radius, m)
        idx[i] = np.stack([np.resize(g, m) if g.size < m else g
                           for g in groups]) + i * n
    flat = idx.reshape(-1)
    gathered = nm.take_rows(feats, flat)
    rel = xyz.reshape(-1, 3)[flat] - np.repeat(centers.reshape(-1, 3), m, axis=0)
    h = nm.mlp_forward(nm.concat([gathered, nm.as_diff(rel)], axis=1),
                       mlp, params, prefix=prefix)
    pooled = nm.max_(nm.reshape(h, (b * k, m, h.shape[1])), axis=1)
    return centers, pooled


def encode_objects(point_sets: Sequence[np.ndarray], cfg: EncoderConfig,
                   params: dict[str, DiffArray],
                   teacher_vecs: Sequence[np.ndarray] | None = None,
                   rng: np.random.Generator | None = None,
                   prefix: str = "enc") -> tuple[DiffArray, DiffArray, DiffArray]:
    """Batched twin of encode_object over many clouds at once.

    Returns stacked (f_p, f_m, f_o), each (B, out_dim), numerically equal
    to encoding each object separately but with one MLP pass per layer.
    """
    b = len(point_sets)
    if b == 0:
        raise EncoderError("need at least one object")
    pts = np.stack([resample_points(np.asarray(p, dtype=np.float64),
                                    cfg.points_per_object, rng)
                    for p in point_sets])
    xyz = pts[:, :, :3] - pts[:, :, :3].mean(axis=1, keepdims=True)
    feats = nm.as_diff(pts[:, :, 3:6].reshape(-1, 3))

    split = cfg.fuse_layer_index - 1
    for i in range(split):
        xyz, feats = _batched_layer(xyz, feats, cfg.layers[i], params,
                                    prefix=f"{prefix}.shared{i}")

    xyz_p, feats_p = xyz, feats
    for i in range(split, cfg.num_sa_layers):
        xyz_p, feats_p = _batched_layer(xyz_p, feats_p, cfg.layers[i], params,
                                        prefix=f"{prefix}.p{i}")

    xyz_m, feats_m = xyz, feats
    if teacher_vecs is not None:
        if len(teacher_vecs) != b:
            raise EncoderError(f"{len(teacher_vecs)} teacher vectors for {b} objects")
        proj = nm.mlp_forward(
            nm.as_diff(np.stack(teacher_vecs)),
            MlpSpec((cfg.teacher_proj_dim,), "none"), params,
            prefix=f"{prefix}.teacher_proj")
        rep = np.repeat(np.arange(b), xyz.shape[1])
        feats_m = nm.add(feats_m, nm.take_rows(proj, rep))
    for i in range(split, cfg.num_sa_layers):
        xyz_m, feats_m = _batched_layer(xyz_m, feats_m, cfg.layers[i], params,
                                        prefix=f"{prefix}.m{i}")

    return feats_p, feats_m, nm.add(feats_p, feats_m)
