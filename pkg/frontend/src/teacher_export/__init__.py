"""Offline embedding exporter for the lsvg teacher interchange format.

Runs a small pretrained image-text encoder over object crops named by a
frame manifest, plus one prompt per vocabulary class, and writes the JSON
file that `lsvg.alignment.load_teacher` consumes.
"""

from .export import (ExportError, ExportJob, export_embeddings,
                     load_manifest, padded_box, read_vocab)
from .model import TinyImageTextEncoder, load_pretrained

__all__ = [
    "ExportError", "ExportJob", "export_embeddings", "load_manifest",
    "padded_box", "read_vocab", "TinyImageTextEncoder", "load_pretrained",
]
