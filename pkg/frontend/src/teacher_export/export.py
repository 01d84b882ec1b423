"""Batch export of object-crop and class-prompt embeddings.

Input: a frame manifest (images with per-object 2D boxes) and a class
vocabulary JSON. Output: the teacher interchange file — `{"dim", "prompts",
"objects"}` — written atomically. Unusable inputs (missing images,
degenerate crops) are skipped with a warning; an export that produces zero
object embeddings fails.
"""

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .model import DEFAULT_MODEL_ID, IMAGE_SIZE, load_pretrained

log = logging.getLogger("teacher_export")

CROP_MARGIN = 0.1      # context padding, fraction of box size per side
MIN_CROP_SIDE = 4      # px; anything smaller carries no usable signal


class ExportError(Exception):
    """Invalid manifest/vocab input or an export that produced nothing."""


@dataclass(frozen=True)
class ObjectRef:
    object_id: int
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels


@dataclass(frozen=True)
class FrameSpec:
    image: Path
    scene: str
    view: int
    objects: tuple[ObjectRef, ...]


@dataclass(frozen=True)
class ExportJob:
    frames: tuple[FrameSpec, ...]
    vocab: tuple[str, ...]
    out: Path
    model_id: str = DEFAULT_MODEL_ID


def padded_box(box: tuple[float, float, float, float], width: int,
               height: int, margin: float = CROP_MARGIN
               ) -> tuple[int, int, int, int]:
    """Integer crop window: each side padded by ``margin`` of the box's
    extent on that axis, clamped to the image."""
    x0, y0, x1, y1 = box
    mx, my = margin * (x1 - x0), margin * (y1 - y0)
    return (max(0, math.floor(x0 - mx)), max(0, math.floor(y0 - my)),
            min(width, math.ceil(x1 + mx)), min(height, math.ceil(y1 + my)))


def _require(cond: bool, loc: str, msg: str) -> None:
    if not cond:
        raise ExportError(f"{loc}: {msg}")


def load_manifest(path: str | Path) -> tuple[FrameSpec, ...]:
    """Parse and validate a manifest; errors name the offending JSON path.

    Schema: {"frames": [{"image": str, "scene": str, "view": int,
    "objects": [{"id": int, "box": [x0, y0, x1, y1]}, ...]}, ...]}.
    Image paths are resolved relative to the manifest file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ExportError(f"{path}: invalid JSON ({e})") from e
    _require(isinstance(raw, dict) and isinstance(raw.get("frames"), list),
             f"{path}: $", "expected an object with a 'frames' list")
    _require(len(raw["frames"]) > 0, f"{path}: $.frames", "no frames")
    frames = []
    for i, fr in enumerate(raw["frames"]):
        loc = f"{path}: $.frames[{i}]"
        _require(isinstance(fr, dict), loc, "expected an object")
        _require(isinstance(fr.get("image"), str) and fr["image"], loc,
                 "missing image path")
        _require(isinstance(fr.get("scene"), str) and fr["scene"], loc,
                 "missing scene id")
        _require(isinstance(fr.get("view"), int), loc, "missing view id")
        _require(isinstance(fr.get("objects"), list) and fr["objects"], loc,
                 "missing objects list")
        objects = []
        for j, ob in enumerate(fr["objects"]):
            oloc = f"{loc}.objects[{j}]"
            _require(isinstance(ob, dict), oloc, "expected an object")
            _require(isinstance(ob.get("id"), int), oloc, "missing int id")
            box = ob.get("box")
            _require(isinstance(box, list) and len(box) == 4
                     and all(isinstance(v, (int, float)) for v in box),
                     oloc, "box must be [x0, y0, x1, y1]")
            x0, y0, x1, y1 = (float(v) for v in box)
            _require(x1 > x0 and y1 > y0, oloc,
                     f"box has non-positive extent: {box}")
            objects.append(ObjectRef(ob["id"], (x0, y0, x1, y1)))
        frames.append(FrameSpec(image=(path.parent / fr["image"]),
                                scene=fr["scene"], view=fr["view"],
                                objects=tuple(objects)))
    keys = [(f.scene, o.object_id, f.view) for f in frames for o in f.objects]
    _require(len(keys) == len(set(keys)), f"{path}: $.frames",
             "duplicate (scene, object, view) key across frames")
    return tuple(frames)


def read_vocab(path: str | Path) -> tuple[str, ...]:
    """Class names from a vocabulary JSON: {"classes": [...], "synonyms": {...}}."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ExportError(f"{path}: invalid JSON ({e})") from e
    classes = raw.get("classes") if isinstance(raw, dict) else None
    _require(isinstance(classes, list) and classes
             and all(isinstance(c, str) and c for c in classes),
             f"{path}: $.classes", "expected a non-empty list of class names")
    _require(len(set(classes)) == len(classes), f"{path}: $.classes",
             "duplicate class names")
    return tuple(classes)


def _crop(img: Image.Image, box: tuple[float, float, float, float]
          ) -> np.ndarray | None:
    """Padded crop resized to the model's input, or None if degenerate."""
    x0, y0, x1, y1 = padded_box(box, img.width, img.height)
    if x1 - x0 < MIN_CROP_SIDE or y1 - y0 < MIN_CROP_SIDE:
        return None
    patch = img.crop((x0, y0, x1, y1)).resize((IMAGE_SIZE, IMAGE_SIZE),
                                              Image.BILINEAR)
    return np.asarray(patch, dtype=np.uint8)


def export_embeddings(job: ExportJob) -> dict:
    """Run the encoder over every usable crop and every vocab prompt and
    write the interchange file. Returns a summary dict."""
    torch.set_num_threads(1)  # keep batch results reproducible
    model, meta = load_pretrained(job.model_id)

    crops: list[np.ndarray] = []
    keys: list[tuple[str, int, int]] = []
    skipped = 0
    for frame in job.frames:
        try:
            with Image.open(frame.image) as f:
                img = f.convert("RGB")
        except (OSError, ValueError) as e:
            log.warning("skipping frame %s: unreadable image (%s)",
                        frame.image, e)
            skipped += len(frame.objects)
            continue
        for ref in frame.objects:
            patch = _crop(img, ref.box)
            if patch is None:
                log.warning("skipping object %d in %s: crop below %dpx",
                            ref.object_id, frame.image, MIN_CROP_SIDE)
                skipped += 1
                continue
            crops.append(patch)
            keys.append((frame.scene, ref.object_id, frame.view))
    if not crops:
        raise ExportError(
            f"no usable object crops in {len(job.frames)} frames "
            f"({skipped} skipped)")

    with torch.inference_mode():
        img_embs = model.encode_images(np.stack(crops)).numpy()
        prompt_embs = model.encode_prompts(list(job.vocab)).numpy()

    payload = {
        "dim": model.dim,
        "prompts": {name: [float(v) for v in row.astype(np.float32)]
                    for name, row in zip(job.vocab, prompt_embs)},
        "objects": [{"scene": scene, "object": obj, "view": view,
                     "emb": [float(v) for v in row.astype(np.float32)]}
                    for (scene, obj, view), row in zip(keys, img_embs)],
    }
    tmp = job.out.with_suffix(job.out.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    os.replace(tmp, job.out)
    return {"objects": len(keys), "skipped": skipped,
            "prompts": len(job.vocab), "dim": model.dim,
            "model_id": meta["model_id"], "out": str(job.out)}
