import json
from pathlib import Path

import pytest

from teacher_export.export import ExportJob, export_embeddings, load_manifest, read_vocab

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def manifest_path() -> Path:
    return FIXTURES / "manifest.json"


@pytest.fixture(scope="session")
def vocab_path() -> Path:
    return FIXTURES / "vocab.json"


@pytest.fixture(scope="session")
def object_classes(manifest_path) -> dict[tuple[str, int, int], str]:
    """Ground-truth class per (scene, object, view), from the manifest's
    extra 'class' keys (which the exporter ignores)."""
    raw = json.loads(manifest_path.read_text())
    return {(fr["scene"], ob["id"], fr["view"]): ob["class"]
            for fr in raw["frames"] for ob in fr["objects"]}


@pytest.fixture(scope="session")
def exported(tmp_path_factory, manifest_path, vocab_path):
    """One shared export of the 10-frame fixture."""
    out = tmp_path_factory.mktemp("export") / "teacher.json"
    job = ExportJob(frames=load_manifest(manifest_path),
                    vocab=read_vocab(vocab_path), out=out)
    summary = export_embeddings(job)
    return {"out": out, "summary": summary}
