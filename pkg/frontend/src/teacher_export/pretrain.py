"""Pretraining script for the packaged encoder.

Trains the image-text model contrastively on procedurally rendered
furniture swatches, then freezes and saves it under a model id. The
packaged `tiny32` weights were produced by:

    python -m teacher_export.pretrain --steps 1500 --seed 0

Deterministic given the seed; rerunning overwrites the packaged weights.
"""

import argparse

import numpy as np
import torch
from PIL import Image

from .export import _crop
from .model import TinyImageTextEncoder, save_pretrained
from .swatches import CLASS_STYLES, render_swatch


def sample_batch(classes: list[str], batch: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Rendered swatches cropped exactly the way the exporter crops."""
    labels = rng.integers(0, len(classes), size=batch)
    crops = []
    for lab in labels:
        img, box = render_swatch(classes[lab], rng)
        patch = _crop(Image.fromarray(img), box)
        assert patch is not None  # swatch boxes are never degenerate
        crops.append(patch)
    return np.stack(crops), labels


def pretrain(steps: int = 1500, batch: int = 64, dim: int = 32,
             seed: int = 0, model_id: str = "tiny32",
             log_every: int = 100, quiet: bool = False):
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    rng = np.random.default_rng(seed)
    classes = list(CLASS_STYLES)
    model = TinyImageTextEncoder(dim=dim)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)

    for step in range(1, steps + 1):
        crops, labels = sample_batch(classes, batch, rng)
        img_embs = model.encode_images(crops)
        prompt_embs = model.encode_prompts(classes)
        logits = model.logit_scale.exp() * img_embs @ prompt_embs.T
        target = torch.from_numpy(labels)
        loss = torch.nn.functional.cross_entropy(logits, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if not quiet and step % log_every == 0:
            acc = (logits.argmax(dim=1) == target).float().mean().item()
            print(f"step {step:5d}  loss {loss.item():.4f}  acc {acc:.3f}")

    model.eval()
    with torch.inference_mode():
        crops, labels = sample_batch(classes, 512, rng)
        logits = model.encode_images(crops) @ model.encode_prompts(classes).T
        val_acc = float((logits.argmax(dim=1).numpy() == labels).mean())
    meta = {"steps": steps, "batch": batch, "seed": seed,
            "classes": classes, "holdout_acc": round(val_acc, 4)}
    path = save_pretrained(model, model_id, meta)
    if not quiet:
        print(f"holdout accuracy {val_acc:.3f}; saved {path}")
    return model, meta


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-id", default="tiny32")
    args = p.parse_args(argv)
    pretrain(steps=args.steps, batch=args.batch, dim=args.dim,
             seed=args.seed, model_id=args.model_id)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
