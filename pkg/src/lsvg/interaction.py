"""Cross-modal interaction: box geometry encoding, vision-language
cross-attention, iterated graph attention, and the grounding head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import DiffArray, MlpSpec
from .geometry import Box3D, rotate_box
from .scenegraph import (GraphAttentionConfig, SceneGraph, graph_attention,
                         init_graph_attention)


class InteractionError(ValueError):
    pass


DEFAULT_ANGLES = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
BOX_VEC_DIM = 11  # center(3) + size(3) + sin/cos(yaw) + scene extent(3)


@dataclass(frozen=True)
class InteractionConfig:
    d_model: int
    heads: int = 8
    iterations: int = 2
    angles: tuple[float, ...] = DEFAULT_ANGLES

    def __post_init__(self):
        if self.iterations < 0:
            raise InteractionError("iterations must be >= 0")
        if not self.angles:
            raise InteractionError("need at least one rotation angle")
        if self.d_model % self.heads != 0:
            raise InteractionError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def gat_config(self) -> GraphAttentionConfig:
        return GraphAttentionConfig(d_model=self.d_model, heads=self.heads)


@dataclass
class GroundingResult:
    scores: np.ndarray            # per-object logits, length = object count
    predicted_id: int             # argmax object index, ties to lowest id
    logits: DiffArray             # differentiable scores for the loss
    cross_attention: list[np.ndarray] = field(default_factory=list)
    graph_attention: list[np.ndarray] = field(default_factory=list)
    node_ids: list[int] = field(default_factory=list)


def _ln_params(d: int) -> tuple[DiffArray, DiffArray]:
    return (DiffArray(np.ones(d), requires_grad=True),
            DiffArray(np.zeros(d), requires_grad=True))


def _geo_spec(d: int) -> MlpSpec:
    # three layers: pairwise relations have to be squeezed out of the
    # rotation-averaged encoding, which needs the extra depth
    return MlpSpec((d, d, d), "relu")


def _ground_spec(d: int) -> MlpSpec:
    return MlpSpec((d, d, 1), "relu")


def init_interaction(cfg: InteractionConfig, rng: np.random.Generator,
                     prefix: str = "inter") -> dict[str, DiffArray]:
    d = cfg.d_model
    params: dict[str, DiffArray] = {}
    params.update(nm.init_mlp(_geo_spec(d), BOX_VEC_DIM, rng,
                              prefix=f"{prefix}.geo"))
    for i in range(cfg.iterations):
        xp = f"{prefix}.xattn{i}"
        for name in ("wq", "wk", "wv"):
            params[f"{xp}.{name}"] = nm.uniform_init((d, d), d, rng)
        params[f"{xp}.lnq.g"], params[f"{xp}.lnq.b"] = _ln_params(d)
        params[f"{xp}.lnkv.g"], params[f"{xp}.lnkv.b"] = _ln_params(d)
        params.update(init_graph_attention(cfg.gat_config, rng,
                                           prefix=f"{prefix}.gat{i}"))
    params.update(nm.init_mlp(_ground_spec(d), 2 * d, rng,
                              prefix=f"{prefix}.ground"))
    return params


def encode_boxes_multiview(boxes: list[Box3D], cfg: InteractionConfig,
                           params: dict[str, DiffArray],
                           prefix: str = "inter.geo") -> DiffArray:
    """Rotation-averaged box geometry features, one row per object.

    Boxes are centered on the scene centroid, rotated to each configured
    angle, encoded as [center, size, sin/cos yaw, scene extent] through a
    shared MLP, and mean-aggregated over the angles.  The extent vector is
    the per-axis spread of the rotated centers, so every angle sees its own
    consistent global frame.
    """
    if not boxes:
        raise InteractionError("need at least one box")
    centroid = np.mean([b.center for b in boxes], axis=0)
    centered = [Box3D(b.center - centroid, b.size, b.yaw) for b in boxes]
    per_angle = []
    for angle in cfg.angles:
        rotated = [rotate_box(b, angle) for b in centered]
        centers = np.stack([b.center for b in rotated])
        extent = centers.max(axis=0) - centers.min(axis=0)
        vecs = np.stack([
            np.concatenate([b.center, b.size,
                            [math.sin(b.yaw), math.cos(b.yaw)], extent])
            for b in rotated])
        per_angle.append(nm.mlp_forward(nm.as_diff(vecs),
                                        _geo_spec(cfg.d_model), params,
                                        prefix=prefix))
    out = per_angle[0]
    for enc in per_angle[1:]:
        out = nm.add(out, enc)
    return nm.mul(out, 1.0 / len(cfg.angles))


def _attend(q: DiffArray, k: DiffArray, v: DiffArray, heads: int
            ) -> tuple[DiffArray, np.ndarray]:
    """Per-head scaled dot-product attention; concatenated head outputs."""
    d = q.shape[1]
    if d % heads != 0:
        raise InteractionError(f"width {d} not divisible by heads {heads}")
    if k.shape[0] == 0:
        raise InteractionError("attention needs at least one key/value row")
    d_k = d // heads
    outs = []
    snap = np.empty((heads, q.shape[0], k.shape[0]))
    for h in range(heads):
        cols = (slice(None), slice(h * d_k, (h + 1) * d_k))
        qh, kh, vh = nm.getitem(q, cols), nm.getitem(k, cols), nm.getitem(v, cols)
        probs = nm.softmax(nm.mul(nm.matmul(qh, kh.T), 1.0 / math.sqrt(d_k)),
                           axis=1)
        snap[h] = probs.values
        outs.append(nm.matmul(probs, vh))
    return nm.concat(outs, axis=1), snap


def cross_attention(q_v: DiffArray, k_t: DiffArray, v_t: DiffArray,
                    heads: int) -> tuple[DiffArray, np.ndarray]:
    """softmax(Q_v K_t^T / sqrt(d_k)) V_t per head, concatenated, then
    residual-added onto Q_v.  Returns (output, attention snapshot)."""
    attended, snap = _attend(nm.as_diff(q_v), nm.as_diff(k_t),
                             nm.as_diff(v_t), heads)
    return nm.add(q_v, attended), snap


def cross_attention_layer(obj_feats: DiffArray, token_feats: DiffArray,
                          cfg: InteractionConfig, params: dict[str, DiffArray],
                          prefix: str) -> tuple[DiffArray, np.ndarray]:
    """Pre-norm projections feeding the attention; the residual carries the
    raw object features."""
    if token_feats.shape[0] == 0:
        raise InteractionError("cross attention needs at least one text token")
    nq = nm.layer_norm(obj_feats, params[f"{prefix}.lnq.g"],
                       params[f"{prefix}.lnq.b"])
    nkv = nm.layer_norm(token_feats, params[f"{prefix}.lnkv.g"],
                        params[f"{prefix}.lnkv.b"])
    q = nm.matmul(nq, params[f"{prefix}.wq"])
    k = nm.matmul(nkv, params[f"{prefix}.wk"])
    v = nm.matmul(nkv, params[f"{prefix}.wv"])
    attended, snap = _attend(q, k, v, cfg.heads)
    return nm.add(obj_feats, attended), snap


def interact(obj_feats: DiffArray, boxes: list[Box3D], graph: SceneGraph,
             token_feats: DiffArray, cfg: InteractionConfig,
             params: dict[str, DiffArray], prefix: str = "inter"
             ) -> tuple[DiffArray, list[np.ndarray], list[np.ndarray]]:
    """Iterated cross-attention + geometry re-fusion + graph attention.

    Non-candidate objects (outside the graph) skip the graph-attention
    update but share every other stage.  iterations=0 returns exactly the
    geometry-fused input features.
    """
    obj_feats = nm.as_diff(obj_feats)
    n = obj_feats.shape[0]
    if len(boxes) != n:
        raise InteractionError(f"{len(boxes)} boxes for {n} objects")
    geo = encode_boxes_multiview(boxes, cfg, params, prefix=f"{prefix}.geo")
    feats = nm.add(obj_feats, geo)
    cross_snaps: list[np.ndarray] = []
    graph_snaps: list[np.ndarray] = []
    for i in range(cfg.iterations):
        feats, snap = cross_attention_layer(feats, token_feats, cfg, params,
                                            prefix=f"{prefix}.xattn{i}")
        cross_snaps.append(snap)
        feats = nm.add(feats, geo)
        if graph.num_nodes:
            updated, gsnap = graph_attention(
                nm.take_rows(feats, graph.node_ids), graph.adjacency,
                cfg.gat_config, params, prefix=f"{prefix}.gat{i}")
            graph_snaps.append(gsnap)
            others = [j for j in range(n) if j not in set(graph.node_ids)]
            order = list(graph.node_ids) + others
            inverse = np.argsort(order)
            merged = (updated if not others else
                      nm.concat([updated, nm.take_rows(feats, others)], axis=0))
            feats = nm.take_rows(merged, inverse)
    return feats, cross_snaps, graph_snaps


def ground(refined: DiffArray, sentence_emb: DiffArray,
           params: dict[str, DiffArray], prefix: str = "inter.ground"
           ) -> tuple[DiffArray, np.ndarray, int]:
    """Score each object feature against the sentence embedding.

    Returns (logits (n, 1) DiffArray, scores (n,) array, predicted index);
    ties go to the lowest object id.
    """
    refined = nm.as_diff(refined)
    n = refined.shape[0]
    if n == 0:
        raise InteractionError("grounding needs at least one object")
    sent = nm.as_diff(sentence_emb)
    if sent.ndim == 1:
        sent = nm.reshape(sent, (1, -1))
    tiled = nm.mul(nm.as_diff(np.ones((n, 1))), sent)
    d = refined.shape[1]
    logits = nm.mlp_forward(nm.concat([refined, tiled], axis=1),
                            _ground_spec(d), params, prefix=prefix)
    scores = logits.values[:, 0].copy()
    return logits, scores, int(np.argmax(scores))
