"""Bucketed grounding accuracy over a dataset, ReferIt3D style: ground-truth
boxes are the candidates, so a sample is correct iff the argmax object is
the annotated target (no IoU threshold)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .alignment import TeacherStore
from .data import GroundingSample
from .model import Model, forward_scene


class EvalError(ValueError):
    pass


BUCKETS = ("easy", "hard", "view_dep", "view_indep")


@dataclass
class EvalReport:
    total: int
    correct: int
    counts: dict[str, int]
    correct_by_bucket: dict[str, int]
    chance: float

    @property
    def overall(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def accuracy(self, bucket: str) -> float:
        n = self.counts.get(bucket, 0)
        return self.correct_by_bucket.get(bucket, 0) / n if n else 0.0

    def to_dict(self) -> dict:
        out = {"total": self.total, "overall": self.overall,
               "chance": self.chance}
        for b in BUCKETS:
            out[b] = {"count": self.counts.get(b, 0),
                      "accuracy": self.accuracy(b)}
        return out


def evaluate(model: Model, samples: Sequence[GroundingSample],
             teacher: TeacherStore | None = None) -> EvalReport:
    """Accuracy per difficulty/view bucket; deterministic, teacher-free by
    default (image-free inference)."""
    if not samples:
        raise EvalError("empty evaluation set")
    known = set(model.vocab.classes)
    unknown = sorted({c for s in samples for c in s.scene.classes
                      if c is not None} - known)
    if unknown:
        raise EvalError(
            f"dataset classes {unknown} missing from checkpoint vocabulary")
    counts = {b: 0 for b in BUCKETS}
    hits = {b: 0 for b in BUCKETS}
    correct = 0
    for s in samples:
        sp = forward_scene(model, s, teacher=teacher)
        ok = sp.predicted_id == s.target_id
        correct += int(ok)
        for bucket in (s.tags.get("difficulty"), s.tags.get("view")):
            if bucket in counts:
                counts[bucket] += 1
                hits[bucket] += int(ok)
    chance = float(np.mean([1.0 / len(s.scene.objects) for s in samples]))
    return EvalReport(total=len(samples), correct=correct, counts=counts,
                      correct_by_bucket=hits, chance=chance)
