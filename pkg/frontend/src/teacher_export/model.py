"""A small image-text embedding model.

Image crops (32x32 RGB) and class prompts are mapped into one shared,
L2-normalized space. The text side hashes character trigrams, so any class
name yields a deterministic embedding, including names never seen during
pretraining. Weights ship with the package; `pretrain.py` regenerates
them from scratch.
"""

import json
import zlib
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from torch import nn

IMAGE_SIZE = 32
TEXT_BUCKETS = 512
PROMPT_TEMPLATE = "the object is {}"
DEFAULT_MODEL_ID = "tiny32"


def trigram_features(text: str) -> np.ndarray:
    """Hashed bag of character trigrams, unit-L1. crc32 keeps the hash
    stable across processes (unlike builtin hash)."""
    padded = f"  {text.lower().strip()} "
    feats = np.zeros(TEXT_BUCKETS, dtype=np.float32)
    for i in range(len(padded) - 2):
        bucket = zlib.crc32(padded[i:i + 3].encode("utf-8")) % TEXT_BUCKETS
        feats[bucket] += 1.0
    total = feats.sum()
    return feats / total if total else feats


class TinyImageTextEncoder(nn.Module):
    def __init__(self, dim: int = 32):
        super().__init__()
        self.dim = dim
        self.conv = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.img_head = nn.Linear(64, dim)
        self.text_net = nn.Sequential(
            nn.Linear(TEXT_BUCKETS, 64), nn.ReLU(), nn.Linear(64, dim),
        )
        self.logit_scale = nn.Parameter(torch.tensor(np.log(1 / 0.07),
                                                     dtype=torch.float32))

    def encode_images(self, images: np.ndarray) -> torch.Tensor:
        """(B, 32, 32, 3) uint8 -> (B, dim) unit rows."""
        if images.ndim != 4 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"expected (B, {IMAGE_SIZE}, {IMAGE_SIZE}, 3) "
                             f"uint8 images, got {images.shape}")
        x = torch.from_numpy(images.astype(np.float32) / 255.0 - 0.5)
        x = x.permute(0, 3, 1, 2)
        feats = self.conv(x).mean(dim=(2, 3))
        return nn.functional.normalize(self.img_head(feats), dim=1)

    def encode_prompts(self, class_names: list[str]) -> torch.Tensor:
        """Prompt embedding per class name, (N, dim) unit rows."""
        feats = np.stack([trigram_features(PROMPT_TEMPLATE.format(n))
                          for n in class_names])
        emb = self.text_net(torch.from_numpy(feats))
        return nn.functional.normalize(emb, dim=1)


def weights_dir() -> Path:
    return Path(resources.files("teacher_export")) / "weights"


def save_pretrained(model: TinyImageTextEncoder, model_id: str,
                    meta: dict, path: Path | None = None) -> Path:
    path = path or weights_dir() / f"{model_id}.pt"
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict(), "dim": model.dim,
                "model_id": model_id, "meta": json.dumps(meta)}, path)
    return path


def load_pretrained(model_id: str = DEFAULT_MODEL_ID
                    ) -> tuple[TinyImageTextEncoder, dict]:
    """Frozen encoder + its pretraining metadata, by model id."""
    path = weights_dir() / f"{model_id}.pt"
    if not path.exists():
        known = sorted(p.stem for p in weights_dir().glob("*.pt"))
        raise FileNotFoundError(
            f"unknown model id {model_id!r}; packaged models: {known}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = TinyImageTextEncoder(dim=int(blob["dim"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, {"model_id": blob["model_id"], **json.loads(blob["meta"])}
