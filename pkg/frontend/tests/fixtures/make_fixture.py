"""Regenerates the checked-in 10-frame fixture.

Three synthetic scenes observed from several views; every frame is a
96x96 PNG of non-overlapping furniture swatches with pixel boxes recorded
in manifest.json. Objects keep their ids and classes across a scene's
views (positions change), mirroring how real multi-view captures behave.
The per-object "class" keys in the manifest are ground truth for the
similarity tests; the exporter itself ignores them.

    python tests/fixtures/make_fixture.py
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from teacher_export.swatches import blank_canvas, draw_object, sample_box, to_uint8

HERE = Path(__file__).parent
SIZE = 96
SCENES = {  # scene id -> (object classes in id order, view count)
    "scene_a": (["chair", "table", "sofa", "lamp"], 4),
    "scene_b": (["cabinet", "chair", "table"], 3),
    "scene_c": (["sofa", "lamp", "cabinet"], 3),
}


def _overlaps(a, b):
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def place_objects(classes, rng):
    """Non-overlapping boxes via bounded rejection sampling."""
    boxes = []
    for cls in classes:
        for _ in range(200):
            box = sample_box(cls, SIZE, SIZE, rng, min_side=14)
            if not any(_overlaps(box, other) for other in boxes):
                boxes.append(box)
                break
        else:
            raise RuntimeError(f"could not place {cls}")
    return boxes


def main():
    rng = np.random.default_rng(2026)
    frames_dir = HERE / "frames"
    frames_dir.mkdir(exist_ok=True)
    frames = []
    for scene_id, (classes, n_views) in SCENES.items():
        for view in range(n_views):
            img = blank_canvas(SIZE, SIZE, rng)
            boxes = place_objects(classes, rng)
            for cls, box in zip(classes, boxes):
                draw_object(img, box, cls, rng)
            name = f"{scene_id}_v{view}.png"
            Image.fromarray(to_uint8(img)).save(frames_dir / name)
            frames.append({
                "image": f"frames/{name}",
                "scene": scene_id,
                "view": view,
                "objects": [{"id": i, "class": cls,
                             "box": [float(b) for b in box]}
                            for i, (cls, box) in enumerate(zip(classes, boxes))],
            })
    (HERE / "manifest.json").write_text(
        json.dumps({"frames": frames}, indent=1) + "\n", encoding="utf-8")
    classes = sorted({c for cls_list, _ in SCENES.values() for c in cls_list})
    (HERE / "vocab.json").write_text(
        json.dumps({"classes": classes, "synonyms": {}}, indent=1) + "\n",
        encoding="utf-8")
    print(f"wrote {len(frames)} frames, vocab {classes}")


if __name__ == "__main__":
    main()
