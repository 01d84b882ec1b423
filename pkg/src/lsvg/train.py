"""Training loop: composite loss, Adam, step-wise lr decay, hybrid
GT/perturbed object sampling, and deterministic seeded runs."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .numerics import DiffArray
from .alignment import TeacherStore, alignment_loss
from .data import GroundingSample, Scene, dataset_vocab
from .encoder import encode_objects
from .geometry import Box3D, ObjectProposal, PointCloud, select_view
from .language import build_token_vocab
from .model import Model, ModelConfig


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 5e-4
    lr_decay: float = 0.65
    decay_start: int = 30
    decay_end: int = 80
    decay_every: int = 10
    lambda1: float = 0.5
    lambda2: float = 0.1
    lambda3: float = 0.5
    hybrid_gt_prob: float = 0.5
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2, self.lambda3):
            if not 0 < lam < 1:
                raise TrainError(f"loss weights must lie in (0, 1), got {lam}")
        if self.lr <= 0:
            raise TrainError("lr must be positive")
        if not 0 <= self.hybrid_gt_prob <= 1:
            raise TrainError("hybrid_gt_prob must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainError("epochs and batch_size must be >= 1")

    @staticmethod
    def desk(**overrides) -> "TrainConfig":
        return replace(TrainConfig(), **overrides)

    @staticmethod
    def paper(**overrides) -> "TrainConfig":
        return replace(TrainConfig(epochs=100), **overrides)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(raw: dict) -> "TrainConfig":
        return TrainConfig(**raw)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Stepped decay: multiply by lr_decay every decay_every epochs, active
    only within [decay_start, decay_end]; epochs are 1-indexed."""
    e = min(max(epoch, cfg.decay_start), cfg.decay_end)
    steps = (e - cfg.decay_start) // cfg.decay_every
    return cfg.lr * cfg.lr_decay ** steps


def total_loss(l_ot, l_ref, l_t, l_of, lambda1: float, lambda2: float,
               lambda3: float) -> DiffArray:
    """lambda1 * L_ot + L_ref + lambda2 * L_t + lambda3 * L_of."""
    return nm.add(nm.add(nm.mul(nm.as_diff(l_ot), lambda1), nm.as_diff(l_ref)),
                  nm.add(nm.mul(nm.as_diff(l_t), lambda2),
                         nm.mul(nm.as_diff(l_of), lambda3)))


# -- noisy-object stand-in for segmentation outputs -------------------------

def perturb_objects(objects: Sequence[ObjectProposal],
                    rng: np.random.Generator,
                    center_sigma: float = 0.05,
                    drop_fraction: float = 0.1) -> list[ObjectProposal]:
    """Jitter each object's position by N(0, sigma) and drop a fraction of
    its points, simulating imperfect segmentation."""
    out = []
    for o in objects:
        offset = rng.normal(0.0, center_sigma, size=3)
        pts = o.cloud.points.copy()
        pts[:, :3] += offset
        n = pts.shape[0]
        keep = max(1, n - int(round(drop_fraction * n)))
        idx = np.sort(rng.choice(n, size=keep, replace=False))
        out.append(ObjectProposal(
            object_id=o.object_id, cloud=PointCloud(pts[idx]),
            box=Box3D(o.box.center + offset, o.box.size.copy(), o.box.yaw),
            class_name=o.class_name))
    return out


def hybrid_sample(gt_objects: Sequence[ObjectProposal],
                  perturbed_objects: Sequence[ObjectProposal],
                  p: float, rng: np.random.Generator) -> list[ObjectProposal]:
    """Per object, take the GT version with probability p, else the twin."""
    if len(gt_objects) != len(perturbed_objects):
        raise TrainError(f"object set sizes differ: {len(gt_objects)} vs "
                         f"{len(perturbed_objects)}")
    draws = rng.random(len(gt_objects))
    return [g if d < p else q
            for g, q, d in zip(gt_objects, perturbed_objects, draws)]


# -- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, DiffArray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.values -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c)
                                                  + self.eps)


# -- one minibatch ------------------------------------------------------------

def train_step(model: Model, batch: Sequence[GroundingSample],
               teacher: TeacherStore, cfg: TrainConfig,
               rng: np.random.Generator) -> dict:
    """Forward + loss over one minibatch; gradients are left in params."""
    scenes: list[Scene] = []
    for s in batch:
        objs = hybrid_sample(s.scene.objects,
                             perturb_objects(s.scene.objects, rng),
                             cfg.hybrid_gt_prob, rng)
        scenes.append(Scene(scene_id=s.scene.scene_id, objects=objs,
                            views=s.scene.views))

    all_points, fusion_vecs, align_vecs, gt_class_ids, slices = [], [], [], [], []
    row = 0
    for sc in scenes:
        for o in sc.objects:
            all_points.append(o.cloud.points)
            fusion_vecs.append(teacher.object_emb(
                sc.scene_id, o.object_id,
                select_view(o.object_id, sc.views), o.class_name))
            align_vecs.append(teacher.object_emb(
                sc.scene_id, o.object_id,
                select_view(o.object_id, sc.views, mode="random", rng=rng),
                o.class_name))
            gt_class_ids.append(model.vocab.class_id(o.class_name))
        slices.append((row, row + len(sc.objects)))
        row += len(sc.objects)

    f_p, _, f_o = encode_objects(all_points, model.cfg.encoder, model.params,
                                 teacher_vecs=fusion_vecs, rng=rng)
    gt_ids = np.asarray(gt_class_ids)
    l_of = nm.cross_entropy(model.classify_objects(f_o), gt_ids)

    prompts = model.encode_prompts()
    prompts_proj = model.proj_text(prompts)

    l_ref_terms, l_t_terms, correct = [], [], 0
    for sample, sc, (lo, hi) in zip(batch, scenes, slices):
        rows = np.arange(lo, hi)
        sp = model.ground_scene(sc, nm.take_rows(f_p, rows),
                                nm.take_rows(f_o, rows), sample.utterance,
                                prompts, prompts_proj)
        l_ref_terms.append(nm.cross_entropy(
            nm.reshape(sp.logits, (-1,)), sample.target_id))
        target_cls = model.vocab.class_id(
            sc.objects[sample.target_id].class_name)
        l_t_terms.append(nm.cross_entropy(
            model.classify_text(sp.sentence_emb), target_cls))
        correct += int(sp.predicted_id == sample.target_id)

    l_ref = nm.mul(_accumulate(l_ref_terms), 1.0 / len(batch))
    l_t = nm.mul(_accumulate(l_t_terms), 1.0 / len(batch))
    l_ot = alignment_loss(model.proj_points(f_p),
                          nm.take_rows(prompts_proj, gt_ids),
                          np.stack(align_vecs),
                          np.stack([teacher.prompt(model.vocab.name(c))
                                    for c in gt_class_ids]),
                          log_tau=model.log_tau)
    loss = total_loss(l_ot, l_ref, l_t, l_of,
                      cfg.lambda1, cfg.lambda2, cfg.lambda3)
    loss.backward()
    return {"loss": loss.item(), "l_ot": l_ot.item(), "l_ref": l_ref.item(),
            "l_t": l_t.item(), "l_of": l_of.item(),
            "acc": correct / len(batch)}


def _accumulate(terms: list[DiffArray]) -> DiffArray:
    out = terms[0]
    for t in terms[1:]:
        out = nm.add(out, t)
    return out


# -- full run -----------------------------------------------------------------

def train(train_cfg: TrainConfig, model_cfg: ModelConfig,
          samples: Sequence[GroundingSample], teacher: TeacherStore,
          snapshot_path: str | Path | None = None,
          log: Callable[[str], None] | None = None
          ) -> tuple[Model, list[dict], np.random.Generator]:
    """Deterministic training run; returns (model, history, rng).

    The rng's end state belongs in the checkpoint; NaN losses abort with a
    diagnostic snapshot instead of silently continuing.
    """
    if not samples:
        raise TrainError("dataset is empty")
    vocab = dataset_vocab(samples)
    if teacher.dim != model_cfg.d_teacher:
        raise TrainError(f"teacher dim {teacher.dim} != model d_teacher "
                         f"{model_cfg.d_teacher}")
    teacher.validate_vocab(vocab)
    token_vocab = build_token_vocab([s.utterance for s in samples],
                                    vocab.classes)
    model = Model.build(model_cfg, vocab, token_vocab, train_cfg.seed)
    adam = Adam(model.params, train_cfg.beta1, train_cfg.beta2,
                train_cfg.adam_eps)
    rng = np.random.default_rng((train_cfg.seed, 1))
    history: list[dict] = []
    step = 0
    t0 = time.time()
    for epoch in range(1, train_cfg.epochs + 1):
        lr = lr_at(train_cfg, epoch)
        order = rng.permutation(len(samples))
        stats: list[dict] = []
        for lo in range(0, len(samples), train_cfg.batch_size):
            batch = [samples[i] for i in order[lo:lo + train_cfg.batch_size]]
            nm.zero_grads(model.params)
            info = train_step(model, batch, teacher, train_cfg, rng)
            if not np.isfinite(info["loss"]):
                _dump_snapshot(model, info, epoch, step, snapshot_path)
                raise TrainError(
                    f"non-finite loss at epoch {epoch} step {step}: {info}")
            adam.step(lr)
            stats.append(info)
            step += 1
        epoch_info = {
            "epoch": epoch, "lr": lr,
            "loss": float(np.mean([s["loss"] for s in stats])),
            "acc": float(np.mean([s["acc"] for s in stats])),
            "elapsed": time.time() - t0,
        }
        history.append(epoch_info)
        if log:
            log(f"epoch {epoch:3d}  lr {lr:.2e}  loss {epoch_info['loss']:.4f}"
                f"  train-acc {epoch_info['acc']:.3f}")
    return model, history, rng


def _dump_snapshot(model: Model, info: dict, epoch: int, step: int,
                   path: str | Path | None) -> None:
    snap = {
        "epoch": epoch, "step": step, "losses": info,
        "param_absmax": {k: float(np.abs(p.values).max())
                         for k, p in model.params.items()},
        "grad_absmax": {k: (float(np.abs(p.grad).max())
                            if p.grad is not None else None)
                        for k, p in model.params.items()},
    }
    target = Path(path) if path else Path("lsvg_nan_snapshot.json")
    target.write_text(json.dumps(snap, indent=1), encoding="utf-8")
