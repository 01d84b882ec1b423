"""Contrastive alignment losses and the frozen 2D-teacher embedding store."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import DiffArray
from .language import ClassVocabulary

DEFAULT_TEMPERATURE = 0.07


class AlignmentError(ValueError):
    pass


def contrastive_loss(x: DiffArray, y: DiffArray) -> DiffArray:
    """Mean InfoNCE over paired rows: row i of x matches row i of y.

    (1/C1) * sum_i -log( exp(x_i . y_i) / sum_j exp(x_i . y_j) ), C1 <= C2.
    """
    x, y = nm.as_diff(x), nm.as_diff(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise AlignmentError(f"incompatible feature shapes {x.shape} vs {y.shape}")
    c1, c2 = x.shape[0], y.shape[0]
    if c1 > c2:
        raise AlignmentError(f"C1={c1} exceeds C2={c2}; rows of x must pair into y")
    logits = nm.matmul(x, y.T)
    return nm.cross_entropy(logits, np.arange(c1))


def alignment_loss(f_p: DiffArray, f_t: DiffArray, f_i_star: DiffArray,
                   f_t_star: DiffArray, log_tau: DiffArray | float | None = None
                   ) -> DiffArray:
    """Five-term 3D object-text alignment loss with 2D assistance.

    All four feature sets must share the batch index and (after the caller's
    projections) the feature dim.  Rows are L2-normalized and the pairwise
    logits divided by the temperature tau before each contrastive term; the
    raw contrastive formula itself stays untouched.
    """
    rows = [nm.as_diff(a) for a in (f_p, f_t, f_i_star, f_t_star)]
    dims = {a.shape[1] if a.ndim == 2 else -1 for a in rows}
    if len(dims) != 1 or -1 in dims:
        raise AlignmentError(f"alignment features disagree in dim: "
                             f"{[a.shape for a in rows]}")
    if log_tau is None:
        log_tau = math.log(DEFAULT_TEMPERATURE)
    inv_tau = nm.exp(nm.mul(nm.as_diff(log_tau), -1.0))
    p, t, i_star, t_star = (nm.l2_normalize(a, axis=1) for a in rows)
    p_scaled = nm.mul(p, inv_tau)
    t_scaled = nm.mul(t, inv_tau)
    i_scaled = nm.mul(i_star, inv_tau)
    terms = [
        contrastive_loss(p_scaled, t),
        contrastive_loss(p_scaled, i_star),
        contrastive_loss(t_scaled, t_star),
        contrastive_loss(p_scaled, t_star),
        contrastive_loss(i_scaled, t),
    ]
    out = terms[0]
    for term in terms[1:]:
        out = nm.add(out, term)
    return out


# -- teacher store --------------------------------------------------------

def _key_seed(*parts) -> np.random.Generator:
    """Seeded generator from a stable hash of the key parts."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class TeacherStore:
    """Frozen per-object view embeddings (F_I*) and per-class prompts (F_T*).

    Either fully explicit (loaded from the interchange file) or synthetic:
    a synthetic store derives object embeddings on demand from the class
    prompt plus seeded Gaussian jitter, independently per view.
    """

    dim: int
    prompt_embs: dict[str, np.ndarray]
    object_embs: dict[tuple[str, int, int], np.ndarray] = field(default_factory=dict)
    synth_sigma: float | None = None
    synth_seed: int | None = None

    @property
    def is_synthetic(self) -> bool:
        return self.synth_sigma is not None

    def prompt(self, class_name: str) -> np.ndarray:
        if class_name not in self.prompt_embs:
            raise AlignmentError(f"teacher store has no prompt for class {class_name!r}")
        return self.prompt_embs[class_name]

    def object_emb(self, scene_id: str, object_id: int, view_id: int,
                   class_name: str | None = None) -> np.ndarray:
        key = (scene_id, int(object_id), int(view_id))
        if key in self.object_embs:
            return self.object_embs[key]
        if not self.is_synthetic:
            raise AlignmentError(f"teacher store has no embedding for {key}")
        if class_name is None:
            raise AlignmentError("synthetic teacher lookup needs the object class")
        rng = _key_seed(self.synth_seed, scene_id, object_id, view_id)
        vec = self.prompt(class_name) + self.synth_sigma * rng.standard_normal(self.dim)
        vec = vec / np.linalg.norm(vec)
        self.object_embs[key] = vec
        return vec

    def validate_vocab(self, vocab: ClassVocabulary) -> None:
        missing = [c for c in vocab.classes if c not in self.prompt_embs]
        if missing:
            raise AlignmentError(f"teacher store missing prompts for classes {missing}")


def synth_teacher(vocab: ClassVocabulary, d_teacher: int, noise_sigma: float,
                  seed: int) -> TeacherStore:
    """Synthetic stand-in for the frozen 2D teacher.

    Class prompts are mutually orthogonal unit vectors; object embeddings are
    the class vector plus per-view Gaussian jitter, renormalized.
    """
    if d_teacher < len(vocab):
        raise AlignmentError(
            f"d_teacher={d_teacher} must be >= vocabulary size {len(vocab)}")
    if noise_sigma < 0:
        raise AlignmentError("noise sigma must be >= 0")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d_teacher, len(vocab))))
    prompts = {name: basis[:, i].copy() for i, name in enumerate(vocab.classes)}
    return TeacherStore(dim=d_teacher, prompt_embs=prompts,
                        synth_sigma=float(noise_sigma), synth_seed=int(seed))


# -- interchange file ------------------------------------------------------
#
# Canonical JSON (UTF-8, no insignificant whitespace):
#   {"dim":D,"prompts":{<class sorted>:[...]},"objects":[{"scene":s,"object":o,
#    "view":v,"emb":[...]} sorted by (scene,object,view)]}
# Floats are float32 values rendered as "%.9e" with a two-digit exponent
# (10 significant digits, round-trips float32 exactly).

def format_f32(x: float) -> str:
    s = f"{float(np.float32(x)):.9e}"
    mantissa, exponent = s.split("e")
    sign, digits = exponent[0], exponent[1:]
    return f"{mantissa}e{sign}{digits.zfill(2)}"


def _vec_json(vec: np.ndarray) -> str:
    return "[" + ",".join(format_f32(v) for v in vec) + "]"


def serialize_teacher(store: TeacherStore) -> str:
    parts = [f'{{"dim":{store.dim},"prompts":{{']
    parts.append(",".join(
        f"{json.dumps(name)}:{_vec_json(store.prompt_embs[name])}"
        for name in sorted(store.prompt_embs)))
    parts.append('},"objects":[')
    items = sorted(store.object_embs.items(), key=lambda kv: kv[0])
    parts.append(",".join(
        f'{{"scene":{json.dumps(scene)},"object":{obj},"view":{view},'
        f'"emb":{_vec_json(vec)}}}'
        for (scene, obj, view), vec in items))
    parts.append("]}")
    return "".join(parts)


def save_teacher(store: TeacherStore, path: str | Path) -> None:
    """Write the interchange file atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(serialize_teacher(store), encoding="utf-8")
    os.replace(tmp, path)


def load_teacher(path: str | Path) -> TeacherStore:
    """Parse and validate an interchange file; errors name the JSON path."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise AlignmentError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise AlignmentError(f"{path}: $: expected an object")
    dim = raw.get("dim")
    if not isinstance(dim, int) or dim <= 0:
        raise AlignmentError(f"{path}: $.dim: expected a positive integer")
    prompts_raw = raw.get("prompts")
    if not isinstance(prompts_raw, dict) or not prompts_raw:
        raise AlignmentError(f"{path}: $.prompts: expected a non-empty object")
    prompts: dict[str, np.ndarray] = {}
    for name, vec in prompts_raw.items():
        arr = _parse_vec(vec, dim, f"{path}: $.prompts[{name!r}]")
        prompts[name] = arr
    objects_raw = raw.get("objects")
    if not isinstance(objects_raw, list):
        raise AlignmentError(f"{path}: $.objects: expected a list")
    objects: dict[tuple[str, int, int], np.ndarray] = {}
    for i, entry in enumerate(objects_raw):
        loc = f"{path}: $.objects[{i}]"
        if not isinstance(entry, dict):
            raise AlignmentError(f"{loc}: expected an object")
        try:
            scene, obj, view = entry["scene"], entry["object"], entry["view"]
        except KeyError as e:
            raise AlignmentError(f"{loc}: missing key {e}") from e
        if not isinstance(scene, str) or not isinstance(obj, int) or not isinstance(view, int):
            raise AlignmentError(f"{loc}: scene/object/view must be str/int/int")
        key = (scene, obj, view)
        if key in objects:
            raise AlignmentError(f"{loc}: duplicate key {key}")
        objects[key] = _parse_vec(entry.get("emb"), dim,
                                  f"{loc} (object {obj} of scene {scene!r})")
    return TeacherStore(dim=dim, prompt_embs=prompts, object_embs=objects)


def _parse_vec(vec, dim: int, loc: str) -> np.ndarray:
    if not isinstance(vec, list):
        raise AlignmentError(f"{loc}: expected a float list")
    if len(vec) != dim:
        raise AlignmentError(f"{loc}: vector length {len(vec)} != dim {dim}")
    arr = np.asarray(vec, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise AlignmentError(f"{loc}: non-finite values")
    return arr


def materialize_teacher(store: TeacherStore, scene_object_views:
                        Sequence[tuple[str, int, int, str]]) -> TeacherStore:
    """Expand a synthetic store into explicit embeddings for the given
    (scene, object, view, class) tuples, e.g. before serialization."""
    out = TeacherStore(dim=store.dim,
                       prompt_embs={k: v.copy() for k, v in store.prompt_embs.items()})
    for scene, obj, view, cls in scene_object_views:
        out.object_embs[(scene, int(obj), int(view))] = store.object_emb(
            scene, obj, view, cls)
    return out
