import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from lsvg.alignment import load_teacher

from teacher_export.cli import main
from teacher_export.export import (ExportError, ExportJob, export_embeddings,
                                   load_manifest, padded_box, read_vocab)

FIXTURES = Path(__file__).parent / "fixtures"


# -- pure helpers --------------------------------------------------------------

def test_padded_box_adds_ten_percent_per_side():
    # box 20 wide, 40 tall -> pads 2 and 4
    assert padded_box((10, 20, 30, 60), 100, 100) == (8, 16, 32, 64)


def test_padded_box_clamps_to_image():
    assert padded_box((0.0, 0.0, 10.0, 10.0), 100, 100) == (0, 0, 11, 11)
    assert padded_box((95.0, 95.0, 99.5, 99.5), 100, 100) == (94, 94, 100, 100)


# -- manifest / vocab parsing ------------------------------------------------------

def test_load_manifest_fixture(manifest_path):
    frames = load_manifest(manifest_path)
    assert len(frames) == 10
    assert sum(len(f.objects) for f in frames) == 34
    # image paths resolve relative to the manifest file
    assert all(f.image.exists() for f in frames)
    assert {f.scene for f in frames} == {"scene_a", "scene_b", "scene_c"}


def _write(tmp_path, payload) -> Path:
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(payload), encoding="utf-8")
    return p


def test_load_manifest_rejects_bad_inputs(tmp_path):
    frame = {"image": "x.png", "scene": "s", "view": 0,
             "objects": [{"id": 1, "box": [0, 0, 10, 10]}]}
    with pytest.raises(ExportError, match="'frames' list"):
        load_manifest(_write(tmp_path, {}))
    with pytest.raises(ExportError, match="no frames"):
        load_manifest(_write(tmp_path, {"frames": []}))
    with pytest.raises(ExportError, match="missing int id"):
        load_manifest(_write(tmp_path, {"frames": [
            {**frame, "objects": [{"box": [0, 0, 1, 1]}]}]}))
    with pytest.raises(ExportError, match="non-positive extent"):
        load_manifest(_write(tmp_path, {"frames": [
            {**frame, "objects": [{"id": 1, "box": [10, 0, 10, 10]}]}]}))
    with pytest.raises(ExportError, match="missing view id"):
        load_manifest(_write(tmp_path, {"frames": [
            {k: v for k, v in frame.items() if k != "view"}]}))
    with pytest.raises(ExportError, match="duplicate"):
        load_manifest(_write(tmp_path, {"frames": [frame, frame]}))
    bad = tmp_path / "bad.json"
    bad.write_text("{nope", encoding="utf-8")
    with pytest.raises(ExportError, match="invalid JSON"):
        load_manifest(bad)


def test_read_vocab(vocab_path, tmp_path):
    assert read_vocab(vocab_path) == ("cabinet", "chair", "lamp", "sofa",
                                      "table")
    with pytest.raises(ExportError, match="class names"):
        read_vocab(_write(tmp_path, {"classes": []}))
    with pytest.raises(ExportError, match="duplicate"):
        read_vocab(_write(tmp_path, {"classes": ["a", "a"]}))


# -- the full export -----------------------------------------------------------

def test_export_summary(exported):
    s = exported["summary"]
    assert s["objects"] == 34 and s["skipped"] == 0
    assert s["prompts"] == 5 and s["dim"] == 32
    assert not exported["out"].with_suffix(".json.tmp").exists()


def test_export_loads_in_primary_without_warnings(exported, object_classes):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        store = load_teacher(exported["out"])
    assert caught == []
    assert store.dim == 32
    assert set(store.object_embs) == set(object_classes)
    assert set(store.prompt_embs) == {"cabinet", "chair", "lamp", "sofa",
                                      "table"}


def test_export_vectors_are_unit_norm(exported):
    raw = json.loads(exported["out"].read_text())
    rows = list(raw["prompts"].values()) + [o["emb"] for o in raw["objects"]]
    norms = np.linalg.norm(np.asarray(rows, dtype=np.float64), axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-4


def test_export_is_deterministic(exported, manifest_path, vocab_path,
                                 tmp_path):
    out2 = tmp_path / "again.json"
    export_embeddings(ExportJob(frames=load_manifest(manifest_path),
                                vocab=read_vocab(vocab_path), out=out2))
    assert out2.read_bytes() == exported["out"].read_bytes()


def test_same_class_prompt_beats_random_other(exported, object_classes):
    """For sampled (crop, true prompt, random other prompt) triplets the
    true class must win the cosine comparison at least 80% of the time."""
    store = load_teacher(exported["out"])
    classes = sorted(store.prompt_embs)
    rng = np.random.default_rng(0)
    wins = trials = 0
    for key, emb in store.object_embs.items():
        true = object_classes[key]
        for _ in range(3):
            other = classes[rng.integers(len(classes) - 1)]
            if other == true:
                other = classes[-1]
            trials += 1
            wins += float(emb @ store.prompt_embs[true]
                          > emb @ store.prompt_embs[other])
    rate = wins / trials
    print(f"{'PASS' if rate >= 0.8 else 'FAIL'} triplet-wins: "
          f"{wins:.0f}/{trials} = {rate:.3f} (need >= 0.8)")
    assert rate >= 0.8


# -- skip/error paths ------------------------------------------------------------

def _manifest_with(tmp_path, objects, image=None) -> Path:
    image = image or str(FIXTURES / "frames" / "scene_a_v0.png")
    return _write(tmp_path, {"frames": [
        {"image": image, "scene": "s", "view": 0, "objects": objects}]})


def test_degenerate_crop_skipped_with_warning(tmp_path, vocab_path, caplog):
    # 1.5px box stays under 4px even after the 10% padding
    mp = _manifest_with(tmp_path, [{"id": 0, "box": [5, 5, 60, 60]},
                                   {"id": 1, "box": [70, 70, 71.5, 71.5]}])
    out = tmp_path / "t.json"
    with caplog.at_level("WARNING", logger="teacher_export"):
        summary = export_embeddings(ExportJob(
            frames=load_manifest(mp), vocab=read_vocab(vocab_path), out=out))
    assert summary["objects"] == 1 and summary["skipped"] == 1
    assert any("below 4px" in r.getMessage() for r in caplog.records)
    keys = {(o["scene"], o["object"], o["view"])
            for o in json.loads(out.read_text())["objects"]}
    assert keys == {("s", 0, 0)}


def test_unreadable_image_skipped_with_warning(tmp_path, vocab_path, caplog):
    good = _manifest_with(tmp_path, [{"id": 0, "box": [5, 5, 60, 60]}])
    payload = json.loads(good.read_text())
    payload["frames"].append({"image": str(tmp_path / "missing.png"),
                              "scene": "s2", "view": 0,
                              "objects": [{"id": 0, "box": [0, 0, 20, 20]}]})
    mp = _write(tmp_path, payload)
    with caplog.at_level("WARNING", logger="teacher_export"):
        summary = export_embeddings(ExportJob(
            frames=load_manifest(mp), vocab=read_vocab(vocab_path),
            out=tmp_path / "t.json"))
    assert summary["objects"] == 1 and summary["skipped"] == 1
    assert any("unreadable image" in r.getMessage() for r in caplog.records)


def test_zero_usable_objects_is_an_error(tmp_path, vocab_path):
    mp = _manifest_with(tmp_path, [{"id": 0, "box": [0, 0, 2, 2]}])
    with pytest.raises(ExportError, match="no usable object crops"):
        export_embeddings(ExportJob(frames=load_manifest(mp),
                                    vocab=read_vocab(vocab_path),
                                    out=tmp_path / "t.json"))
    assert not (tmp_path / "t.json").exists()


# -- CLI -----------------------------------------------------------------------

def test_cli_roundtrip(tmp_path, manifest_path, vocab_path, capsys):
    out = tmp_path / "teacher.json"
    rc = main(["--frames", str(manifest_path), "--vocab", str(vocab_path),
               "--out", str(out)])
    assert rc == 0
    assert "exported 34 object embeddings" in capsys.readouterr().out
    assert load_teacher(out).dim == 32


def test_cli_error_paths(tmp_path, manifest_path, vocab_path, capsys):
    assert main(["--frames", str(tmp_path / "none.json"),
                 "--vocab", str(vocab_path),
                 "--out", str(tmp_path / "o.json")]) == 2
    mp = _manifest_with(tmp_path, [{"id": 0, "box": [0, 0, 2, 2]}])
    assert main(["--frames", str(mp), "--vocab", str(vocab_path),
                 "--out", str(tmp_path / "o.json")]) == 2
    assert "error:" in capsys.readouterr().err
