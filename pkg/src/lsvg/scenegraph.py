"""Language-guided scene-graph construction and masked graph attention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import DiffArray

MASK_VALUE = -1e30


class SceneGraphError(ValueError):
    pass


@dataclass
class SceneGraph:
    """Candidate nodes (object indices), binary adjacency, node features."""

    node_ids: list[int]
    adjacency: np.ndarray  # |V| x |V|, zero diagonal, symmetric
    node_feats: DiffArray | None = None

    def __post_init__(self):
        v = len(self.node_ids)
        if len(set(self.node_ids)) != v:
            raise SceneGraphError("node ids must be unique")
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.shape != (v, v):
            raise SceneGraphError(
                f"adjacency shape {self.adjacency.shape} != ({v}, {v})")
        if v:
            if np.any(np.diag(self.adjacency) != 0):
                raise SceneGraphError("adjacency diagonal must be zero")
            if not np.array_equal(self.adjacency, self.adjacency.T):
                raise SceneGraphError("adjacency must be symmetric")
            if not np.isin(self.adjacency, (0.0, 1.0)).all():
                raise SceneGraphError("adjacency must be binary")

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edge_list(self) -> list[tuple[int, int]]:
        """Undirected edges as sorted (object_id, object_id) pairs."""
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(self.node_ids[i], self.node_ids[j]) for i, j in zip(rows, cols)]


def predict_object_classes(obj_feats, prompt_feats) -> np.ndarray:
    """Cosine-similarity argmax of each object row against class prompt rows.

    Ties break to the lowest class id.  Inputs must share the feature dim
    (callers project both sides into the common alignment space first).
    """
    objs = obj_feats.values if isinstance(obj_feats, DiffArray) else np.asarray(obj_feats)
    prompts = (prompt_feats.values if isinstance(prompt_feats, DiffArray)
               else np.asarray(prompt_feats))
    if prompts.ndim != 2 or prompts.shape[0] == 0:
        raise SceneGraphError("prompt table must be a non-empty 2-D array")
    if objs.ndim != 2 or objs.shape[1] != prompts.shape[1]:
        raise SceneGraphError(
            f"feature dims differ: objects {objs.shape} vs prompts {prompts.shape}")
    a = objs / np.maximum(np.linalg.norm(objs, axis=1, keepdims=True), 1e-12)
    b = prompts / np.maximum(np.linalg.norm(prompts, axis=1, keepdims=True), 1e-12)
    return np.argmax(a @ b.T, axis=1)


def build_graph(predicted_classes: np.ndarray, matched_classes: set[int],
                object_count: int) -> SceneGraph:
    """Complete graph over objects whose predicted class was mentioned.

    Objects outside the matched classes are excluded entirely; they bypass
    graph attention unchanged.  An empty match yields a 0-node graph.
    """
    predicted_classes = np.asarray(predicted_classes)
    if predicted_classes.shape != (object_count,):
        raise SceneGraphError(
            f"predicted_classes shape {predicted_classes.shape} != ({object_count},)")
    node_ids = [i for i in range(object_count)
                if int(predicted_classes[i]) in matched_classes]
    v = len(node_ids)
    adjacency = np.ones((v, v)) - np.eye(v) if v else np.zeros((0, 0))
    return SceneGraph(node_ids=node_ids, adjacency=adjacency)


@dataclass(frozen=True)
class GraphAttentionConfig:
    d_model: int
    heads: int = 8

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise SceneGraphError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def init_graph_attention(cfg: GraphAttentionConfig, rng: np.random.Generator,
                         prefix: str = "gat") -> dict[str, DiffArray]:
    params: dict[str, DiffArray] = {}
    for k in range(cfg.heads):
        params[f"{prefix}.w{k}"] = nm.uniform_init((cfg.d_model, cfg.d_k),
                                                   cfg.d_model, rng)
        params[f"{prefix}.a{k}"] = nm.uniform_init((2 * cfg.d_k, 1), 2 * cfg.d_k, rng)
    return params


def graph_attention(node_feats: DiffArray, adjacency: np.ndarray,
                    cfg: GraphAttentionConfig, params: dict[str, DiffArray],
                    prefix: str = "gat") -> tuple[DiffArray, np.ndarray]:
    """One residual multi-head graph-attention update.

    v_i' = v_i + concat_k (1/sqrt(d_k)) * lrelu( sum_j A_ij * alpha^k_ij * W^k v_j )
    with alpha^k the softmax over neighbors of lrelu(a_k^T [W^k v_i || W^k v_j]).
    Nodes without neighbors come back exactly unchanged.  Also returns the
    masked attention weights, shape (heads, |V|, |V|), for reports.
    """
    node_feats = nm.as_diff(node_feats)
    v = node_feats.shape[0]
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != (v, v):
        raise SceneGraphError(
            f"adjacency shape {adjacency.shape} does not match {v} nodes")
    if node_feats.ndim != 2 or node_feats.shape[1] != cfg.d_model:
        raise SceneGraphError(
            f"node features must be (|V|, {cfg.d_model}), got {node_feats.shape}")
    if v == 0:
        return node_feats, np.zeros((cfg.heads, 0, 0))

    mask = np.where(adjacency > 0, 0.0, MASK_VALUE)
    adj = nm.as_diff(adjacency)
    head_outs = []
    snapshots = np.empty((cfg.heads, v, v))
    scale = 1.0 / np.sqrt(cfg.d_k)
    for k in range(cfg.heads):
        h = nm.matmul(node_feats, params[f"{prefix}.w{k}"])  # (V, d_k)
        a = params[f"{prefix}.a{k}"]
        src = nm.matmul(h, nm.getitem(a, (slice(0, cfg.d_k), slice(None))))
        dst = nm.matmul(h, nm.getitem(a, (slice(cfg.d_k, 2 * cfg.d_k), slice(None))))
        scores = nm.leaky_relu(nm.add(src, dst.T), 0.2)
        alpha = nm.mul(nm.softmax(nm.add(scores, mask), axis=1), adj)
        snapshots[k] = alpha.values
        msg = nm.matmul(alpha, h)
        head_outs.append(nm.mul(nm.leaky_relu(msg, 0.2), scale))
    update = nm.concat(head_outs, axis=1)
    return nm.add(node_feats, update), snapshots
