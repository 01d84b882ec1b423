"""Synthetic spatial-relations benchmark: scene generation and JSONL IO.

Scenes hold non-overlapping boxes with class-specific size/color priors and
surface-sampled point clouds.  Each sample instantiates one relation
template whose unique correct answer is verified geometrically at
generation time with a 0.3 m decision margin.

left-of/right-of use the anchor's frame with the anchor facing the scene
centroid (left = counter-clockwise).  A frame anchored inside the scene is
required: the box-geometry encoding averages over quarter-turn rotations,
so any relation defined against an external observer would flip under a
half-turn of the whole scene while the features stay identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import (Box3D, ObjectProposal, PointCloud, ViewMeta,
                       count_distractors, synthesize_views)
from .language import ClassVocabulary


class DataError(ValueError):
    pass


# name -> (size wdh, color rgb); sizes in meters, colors well separated
CLASS_PRIORS: dict[str, tuple[tuple[float, float, float],
                              tuple[float, float, float]]] = {
    "chair": ((0.5, 0.5, 0.9), (0.80, 0.10, 0.10)),
    "table": ((1.4, 0.8, 0.75), (0.10, 0.10, 0.80)),
    "sofa": ((1.9, 0.9, 0.8), (0.10, 0.70, 0.10)),
    "lamp": ((0.3, 0.3, 1.5), (0.90, 0.90, 0.20)),
    "cabinet": ((0.9, 0.45, 1.8), (0.60, 0.20, 0.70)),
    "bed": ((2.0, 1.6, 0.6), (0.20, 0.80, 0.80)),
    "shelf": ((1.0, 0.3, 1.9), (0.90, 0.50, 0.10)),
    "plant": ((0.4, 0.4, 1.1), (0.30, 0.50, 0.15)),
}

RELATIONS = ("closest-to", "farthest-from", "between", "left-of", "right-of")
VIEW_DEP_RELATIONS = frozenset({"left-of", "right-of"})

TEMPLATES = {
    "closest-to": "the {t} closest to the {a}",
    "farthest-from": "the {t} farthest from the {a}",
    "between": "the {t} between the {a} and the {b}",
    "left-of": "the {t} left of the {a}",
    "right-of": "the {t} right of the {a}",
}


@dataclass(frozen=True)
class GenConfig:
    classes: tuple[str, ...] = tuple(list(CLASS_PRIORS)[:5])
    scenes: int = 100
    min_objects: int = 6
    max_objects: int = 14
    points_per_object: int = 128
    num_views: int = 12
    margin: float = 0.3
    room_halfwidth: float = 3.0
    max_retries: int = 200

    def __post_init__(self):
        if len(self.classes) < 5:
            raise DataError("need at least 5 classes")
        unknown = [c for c in self.classes if c not in CLASS_PRIORS]
        if unknown:
            raise DataError(f"no priors for classes {unknown}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise DataError("bad object count range")
        if self.margin <= 0:
            raise DataError("margin must be positive")


@dataclass
class Scene:
    scene_id: str
    objects: list[ObjectProposal]
    views: list[ViewMeta]

    @property
    def boxes(self) -> list[Box3D]:
        return [o.box for o in self.objects]

    @property
    def classes(self) -> list[str]:
        return [o.class_name for o in self.objects]


@dataclass
class GroundingSample:
    scene: Scene
    utterance: str
    target_id: int
    tags: dict[str, str] = field(default_factory=dict)


def dataset_vocab(samples: Sequence[GroundingSample]) -> ClassVocabulary:
    names = {c for s in samples for c in s.scene.classes}
    if None in names:
        raise DataError("dataset has unlabeled objects; class names required")
    return ClassVocabulary(classes=sorted(names))


# -- object synthesis ------------------------------------------------------

def sample_box_surface(box: Box3D, n: int, color: np.ndarray,
                       color_sigma: float, rng: np.random.Generator
                       ) -> PointCloud:
    """n points uniform over the cuboid surface, rotated and colored."""
    w, d, h = box.size
    areas = np.array([w * d, w * d, w * h, w * h, d * h, d * h])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    local = np.empty((n, 3))
    for i, f in enumerate(faces):
        if f < 2:  # top/bottom
            local[i] = (u[i] * w, v[i] * d, (0.5 if f == 0 else -0.5) * h)
        elif f < 4:  # front/back
            local[i] = (u[i] * w, (0.5 if f == 2 else -0.5) * d, v[i] * h)
        else:  # sides
            local[i] = ((0.5 if f == 4 else -0.5) * w, u[i] * d, v[i] * h)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    xyz = local @ rot.T + box.center
    rgb = np.clip(color + rng.normal(0.0, color_sigma, size=(n, 3)), 0.0, 1.0)
    return PointCloud(np.hstack([xyz, rgb]))


def _make_object(obj_id: int, cls: str, center_xy: np.ndarray, yaw: float,
                 n_points: int, rng: np.random.Generator) -> ObjectProposal:
    size_mean, color_mean = CLASS_PRIORS[cls]
    size = np.asarray(size_mean) * rng.uniform(0.9, 1.1, size=3)
    center = np.array([center_xy[0], center_xy[1], size[2] / 2.0])
    box = Box3D(center, size, yaw % (2 * math.pi))
    cloud = sample_box_surface(box, n_points, np.asarray(color_mean), 0.05, rng)
    return ObjectProposal(object_id=obj_id, cloud=cloud, box=box, class_name=cls)


def _footprint_radius(cls: str) -> float:
    w, d, _ = CLASS_PRIORS[cls][0]
    return 0.55 * math.hypot(w, d)  # circumscribed circle with 10% slack


class _PlacementFailure(Exception):
    pass


class _Placer:
    """Collision-free 2D placement via circumscribed-circle rejection."""

    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.spots: list[tuple[np.ndarray, float]] = []  # (xy, radius)

    def _fits(self, xy: np.ndarray, r: float) -> bool:
        lim = self.cfg.room_halfwidth
        if abs(xy[0]) > lim or abs(xy[1]) > lim:
            return False
        return all(np.linalg.norm(xy - p) >= r + pr + 0.05
                   for p, pr in self.spots)

    def place(self, cls: str, sampler) -> np.ndarray:
        """sampler() proposes an xy; first collision-free one wins."""
        r = _footprint_radius(cls)
        for _ in range(60):
            xy = np.asarray(sampler(), dtype=np.float64)
            if self._fits(xy, r):
                self.spots.append((xy, r))
                return xy
        raise _PlacementFailure

    def anywhere(self, cls: str) -> np.ndarray:
        lim = self.cfg.room_halfwidth
        return self.place(cls, lambda: self.rng.uniform(-lim, lim, size=2))


def _ring_sampler(rng, center, lo, hi):
    def sample():
        ang = rng.uniform(0.0, 2 * math.pi)
        rad = rng.uniform(lo, hi)
        return center + rad * np.array([math.cos(ang), math.sin(ang)])
    return sample


# -- relation constructors (build then verify) -----------------------------

def _xy(positions: dict[str, np.ndarray], key: str) -> np.ndarray:
    return positions[key]


def _construct_positions(relation: str, n_targets: int, cfg: GenConfig,
                         rng: np.random.Generator, placer: _Placer,
                         t_cls: str, a_cls: str, b_cls: str | None
                         ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Returns (target-class xy list with the true target first, anchor xys)."""
    if relation in ("closest-to", "farthest-from"):
        # central anchors keep the distance comparison inside the room and
        # in a range where the rotation-averaged geometry resolves it
        anchor = placer.place(a_cls, _ring_sampler(rng, np.zeros(2), 0.0, 0.5))
        if relation == "closest-to":
            d0 = rng.uniform(0.7, 1.2)
            target = placer.place(t_cls, _ring_sampler(rng, anchor, d0, d0))
            others = [placer.place(t_cls, _ring_sampler(
                rng, anchor, d0 + 1.0, d0 + 2.4))
                for _ in range(n_targets - 1)]
        else:
            d0 = rng.uniform(2.4, 3.2)
            target = placer.place(t_cls, _ring_sampler(rng, anchor, d0, d0))
            others = [placer.place(t_cls, _ring_sampler(
                rng, anchor, 0.7, d0 - 1.0))
                for _ in range(n_targets - 1)]
        return [target] + others, [anchor]
    if relation == "between":
        a = placer.place(a_cls, lambda: rng.uniform(-2.6, -1.2, size=2))
        b = placer.place(b_cls, lambda: rng.uniform(1.2, 2.6, size=2))
        mid = (a + b) / 2.0
        target = placer.place(t_cls, _ring_sampler(rng, mid, 0.0, 0.3))
        others = [placer.place(t_cls, _ring_sampler(rng, mid, 1.3, 2.6))
                  for _ in range(n_targets - 1)]
        return [target] + others, [a, b]
    if relation in ("left-of", "right-of"):
        sign = 1.0 if relation == "left-of" else -1.0
        anchor = placer.place(a_cls, _ring_sampler(rng, np.zeros(2), 1.0, 2.2))
        head = -anchor / np.linalg.norm(anchor)       # faces the room center
        left = np.array([-head[1], head[0]])
        def lateral_spot():
            return (anchor + sign * rng.uniform(0.9, 1.8) * left
                    + rng.uniform(-0.5, 1.0) * head)
        def opposite_spot():
            return (anchor - sign * rng.uniform(0.9, 1.8) * left
                    + rng.uniform(-0.5, 1.0) * head)
        target = placer.place(t_cls, lateral_spot)
        others = [placer.place(t_cls, opposite_spot)
                  for _ in range(n_targets - 1)]
        return [target] + others, [anchor]
    raise DataError(f"unknown relation {relation!r}")


def frame_lateral(anchor_xy: np.ndarray, point_xy: np.ndarray,
                  centroid_xy: np.ndarray) -> float:
    """Signed sideways offset of a point in the anchor's frame, with the
    anchor facing the scene centroid; positive = the anchor's left."""
    head = np.asarray(centroid_xy, dtype=np.float64) - anchor_xy
    n = np.linalg.norm(head)
    if n < 1e-9:
        return 0.0
    head = head / n
    d = point_xy - anchor_xy
    return float(head[0] * d[1] - head[1] * d[0])


def verify_relation(relation: str, target_xy: np.ndarray,
                    other_xys: Sequence[np.ndarray],
                    anchor_xys: Sequence[np.ndarray], margin: float,
                    centroid_xy: np.ndarray | None = None) -> bool:
    """Geometric oracle: the target must win its relation by ``margin``.

    ``centroid_xy`` (mean of all final box centers) fixes the left/right
    frame and is required for those relations.
    """
    if relation == "closest-to":
        d_t = np.linalg.norm(target_xy - anchor_xys[0])
        return all(np.linalg.norm(o - anchor_xys[0]) >= d_t + margin
                   for o in other_xys)
    if relation == "farthest-from":
        d_t = np.linalg.norm(target_xy - anchor_xys[0])
        return all(np.linalg.norm(o - anchor_xys[0]) <= d_t - margin
                   for o in other_xys)
    if relation == "between":
        mid = (anchor_xys[0] + anchor_xys[1]) / 2.0
        d_t = np.linalg.norm(target_xy - mid)
        if d_t > 0.5:
            return False
        return all(np.linalg.norm(o - mid) >= d_t + margin for o in other_xys)
    if relation in ("left-of", "right-of"):
        if centroid_xy is None:
            raise DataError(f"{relation} verification needs the scene centroid")
        anchor = anchor_xys[0]
        if np.linalg.norm(np.asarray(centroid_xy) - anchor) < 0.5:
            return False  # facing direction ill-defined
        sign = 1.0 if relation == "left-of" else -1.0
        if sign * frame_lateral(anchor, target_xy, centroid_xy) < margin:
            return False
        return all(sign * frame_lateral(anchor, o, centroid_xy) <= -margin
                   for o in other_xys)
    raise DataError(f"unknown relation {relation!r}")


def generate_sample(cfg: GenConfig, seed: int, index: int) -> GroundingSample:
    """One scene + utterance; deterministic in (cfg, seed, index).

    Relation templates cycle with the index and difficulty alternates, so
    every relation x difficulty cell is evenly filled; placement retries
    keep the relation fixed.
    """
    rng = np.random.default_rng((seed, index))
    hard = index % 2 == 1
    relation = RELATIONS[index % len(RELATIONS)]
    for _ in range(cfg.max_retries):
        try:
            return _try_sample(cfg, rng, seed, index, hard, relation)
        except _PlacementFailure:
            continue
    raise DataError(f"could not satisfy {relation!r} for scene {index}")


def _try_sample(cfg: GenConfig, rng: np.random.Generator, seed: int,
                index: int, hard: bool, relation: str) -> GroundingSample:
    classes = list(cfg.classes)
    t_cls, a_cls, b_cls = [classes[i] for i in
                           rng.choice(len(classes), size=3, replace=False)]
    anchors = 2 if relation == "between" else 1
    if hard:
        n_targets = int(rng.integers(4, 8))  # 3..6 distractors
    else:
        lo = 2 if relation in ("closest-to", "farthest-from", "between") else 1
        n_targets = int(rng.integers(lo, 4))  # up to 2 distractors
    total = int(rng.integers(max(cfg.min_objects, n_targets + anchors + 1),
                             cfg.max_objects + 1))

    placer = _Placer(cfg, rng)
    target_xys, anchor_xys = _construct_positions(
        relation, n_targets, cfg, rng, placer, t_cls, a_cls, b_cls)

    filler_classes = [c for c in classes
                      if c not in {t_cls, a_cls} | ({b_cls} if anchors == 2 else set())]
    n_fillers = total - n_targets - anchors
    specs: list[tuple[str, np.ndarray]] = []
    specs.append((t_cls, target_xys[0]))
    specs.extend((a_cls if i == 0 else b_cls, xy)
                 for i, xy in enumerate(anchor_xys))
    specs.extend((t_cls, xy) for xy in target_xys[1:])
    for _ in range(n_fillers):
        cls = filler_classes[int(rng.integers(len(filler_classes)))]
        specs.append((cls, placer.anywhere(cls)))

    # the left/right frame depends on the final centroid, so check last
    centroid = np.mean([xy for _, xy in specs], axis=0)
    if not verify_relation(relation, target_xys[0], target_xys[1:],
                           anchor_xys, cfg.margin, centroid_xy=centroid):
        raise _PlacementFailure

    # shuffle so the target id is not positionally biased
    order = rng.permutation(len(specs))
    objects = []
    target_id = -1
    for new_id, old in enumerate(order):
        cls, xy = specs[old]
        yaw = rng.uniform(0.0, 2 * math.pi)
        objects.append(_make_object(new_id, cls, xy, yaw,
                                    cfg.points_per_object, rng))
        if old == 0:
            target_id = new_id

    views = synthesize_views(objects, num_views=cfg.num_views)
    names = {"t": t_cls, "a": a_cls, "b": b_cls}
    utterance = TEMPLATES[relation].format(**names)
    difficulty = "easy" if count_distractors(objects, target_id) <= 2 else "hard"
    tags = {"difficulty": difficulty,
            "view": "view_dep" if relation in VIEW_DEP_RELATIONS else "view_indep",
            "relation": relation}
    scene = Scene(scene_id=f"s{seed}_{index:05d}", objects=objects, views=views)
    return GroundingSample(scene=scene, utterance=utterance,
                           target_id=target_id, tags=tags)


def generate_scenes(cfg: GenConfig, seed: int) -> list[GroundingSample]:
    return [generate_sample(cfg, seed, i) for i in range(cfg.scenes)]


# -- JSONL IO ---------------------------------------------------------------

def _round_list(arr: np.ndarray, nd: int = 5) -> list:
    return [round(float(v), nd) for v in np.asarray(arr).reshape(-1)]


def sample_to_dict(sample: GroundingSample) -> dict:
    scene = sample.scene
    return {
        "scene_id": scene.scene_id,
        "objects": [{
            "id": o.object_id,
            "class": o.class_name,
            "box": {"center": _round_list(o.box.center),
                    "size": _round_list(o.box.size),
                    "yaw": round(float(o.box.yaw), 5)},
            "points": [_round_list(p) for p in o.cloud.points],
        } for o in scene.objects],
        "views": [{"view_id": v.view_id,
                   "visible": {str(k): int(c) for k, c in sorted(v.visible.items())}}
                  for v in scene.views],
        "utterance": sample.utterance,
        "target_id": sample.target_id,
        "tags": dict(sorted(sample.tags.items())),
    }


def write_dataset(samples: Iterable[GroundingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample_to_dict(sample), separators=(",", ":")))
            f.write("\n")


def scene_from_dict(raw: dict, where: str = "scene") -> Scene:
    try:
        objects = []
        for od in raw["objects"]:
            box = Box3D(np.asarray(od["box"]["center"], dtype=np.float64),
                        np.asarray(od["box"]["size"], dtype=np.float64),
                        float(od["box"]["yaw"]))
            pts = np.asarray(od["points"], dtype=np.float64)
            cls = od.get("class")
            objects.append(ObjectProposal(
                object_id=int(od["id"]), cloud=PointCloud(pts), box=box,
                class_name=None if cls is None else str(cls)))
        views = [ViewMeta(view_id=int(v["view_id"]),
                          visible={int(k): int(c)
                                   for k, c in v["visible"].items()})
                 for v in raw.get("views", [])]
        return Scene(scene_id=str(raw["scene_id"]), objects=objects,
                     views=views)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{where}: {e}") from e


def sample_from_dict(raw: dict, where: str = "sample") -> GroundingSample:
    scene = scene_from_dict(raw, where)
    try:
        target = int(raw["target_id"])
        if target not in {o.object_id for o in scene.objects}:
            raise DataError(f"target_id {target} not among object ids")
        return GroundingSample(scene=scene, utterance=str(raw["utterance"]),
                               target_id=target,
                               tags={str(k): str(v)
                                     for k, v in raw.get("tags", {}).items()})
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{where}: {e}") from e


def read_dataset(path: str | Path) -> list[GroundingSample]:
    samples = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{ln}: invalid JSON ({e})") from e
            samples.append(sample_from_dict(raw, where=f"{path}:{ln}"))
    if not samples:
        raise DataError(f"{path}: empty dataset")
    return samples
