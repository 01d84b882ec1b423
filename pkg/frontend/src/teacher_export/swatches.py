"""Procedural furniture swatches.

Rendered rectangles with class-specific color and aspect priors stand in
for photographs: the pretraining script draws single-object swatches and
the test fixture composes multi-object frames from the same primitives.
Everything is seeded and pure numpy; images are uint8 RGB.
"""

import numpy as np

# class -> (base RGB in [0,1], (min, max) height/width aspect)
CLASS_STYLES: dict[str, tuple[tuple[float, float, float],
                              tuple[float, float]]] = {
    "chair": ((0.80, 0.10, 0.10), (0.9, 1.5)),
    "table": ((0.10, 0.10, 0.80), (0.4, 0.7)),
    "sofa": ((0.10, 0.70, 0.10), (0.35, 0.6)),
    "lamp": ((0.90, 0.90, 0.20), (2.2, 3.2)),
    "cabinet": ((0.60, 0.20, 0.70), (1.5, 2.4)),
    "bed": ((0.20, 0.80, 0.80), (0.3, 0.55)),
    "shelf": ((0.90, 0.50, 0.10), (1.6, 2.6)),
    "plant": ((0.30, 0.50, 0.15), (1.8, 2.8)),
}


def blank_canvas(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Muted noisy background, float RGB in [0,1]."""
    base = rng.uniform(0.35, 0.65, size=3)
    img = np.tile(base, (h, w, 1))
    img += rng.normal(0.0, 0.02, size=(h, w, 3))
    return np.clip(img, 0.0, 1.0)


def draw_object(img: np.ndarray, box: tuple[int, int, int, int],
                class_name: str, rng: np.random.Generator) -> None:
    """Fill ``box`` = (x0, y0, x1, y1) with the class's color signature:
    jittered base color, a vertical shading gradient, and pixel noise."""
    color, _ = CLASS_STYLES[class_name]
    x0, y0, x1, y1 = box
    h, w = y1 - y0, x1 - x0
    patch = np.tile(np.asarray(color) + rng.uniform(-0.06, 0.06, size=3),
                    (h, w, 1))
    shade = np.linspace(1.1, 0.75, h)[:, None, None]  # lit top, dark base
    patch = patch * shade + rng.normal(0.0, 0.03, size=patch.shape)
    img[y0:y1, x0:x1] = np.clip(patch, 0.0, 1.0)


def sample_box(class_name: str, h: int, w: int,
               rng: np.random.Generator,
               min_side: int = 10) -> tuple[int, int, int, int]:
    """A box with the class's aspect prior, placed inside an h x w canvas."""
    _, (a_lo, a_hi) = CLASS_STYLES[class_name]
    aspect = rng.uniform(a_lo, a_hi)
    bw = int(rng.uniform(min_side, max(min_side + 1, w / (1.5 * max(1.0, aspect)))))
    bh = int(np.clip(bw * aspect, min_side, h - 2))
    bw = max(min_side, min(bw, w - 2))
    x0 = int(rng.integers(0, w - bw))
    y0 = int(rng.integers(0, h - bh))
    return (x0, y0, x0 + bw, y0 + bh)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render_swatch(class_name: str, rng: np.random.Generator,
                  size: int = 48) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """One object on a noisy background; returns (uint8 image, its box)."""
    img = blank_canvas(size, size, rng)
    box = sample_box(class_name, size, size, rng)
    draw_object(img, box, class_name, rng)
    return to_uint8(img), box
