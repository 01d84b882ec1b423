"""Checkpoint format: exact float32 round trips, byte-stable re-saves, and
loud failures on corrupt files."""

import json
import struct

import numpy as np
import pytest

from lsvg.checkpoint import (MAGIC, CheckpointError, config_hash, file_sha256,
                             load_checkpoint, save_checkpoint)
from lsvg.data import GenConfig, dataset_vocab, generate_scenes
from lsvg.encoder import EncoderConfig, SALayerSpec
from lsvg.interaction import InteractionConfig
from lsvg.language import TextConfig, build_token_vocab
from lsvg.model import Model, ModelConfig


def _tiny_cfg(use_graph=True):
    enc = EncoderConfig(
        points_per_object=16,
        layers=(SALayerSpec(6, 0.8, 4, (8,)), SALayerSpec(0, 0.0, 0, (16,))),
        fuse_layer_index=2, d_teacher=8, out_dim=16)
    return ModelConfig(
        encoder=enc,
        text=TextConfig(d_model=16, heads=2, blocks=1),
        interaction=InteractionConfig(d_model=16, heads=2, iterations=1),
        use_graph=use_graph)


@pytest.fixture(scope="module")
def model():
    data = generate_scenes(GenConfig(scenes=3, points_per_object=32), seed=2)
    vocab = dataset_vocab(data)
    tokens = build_token_vocab([s.utterance for s in data], vocab.classes)
    return Model.build(_tiny_cfg(), vocab, tokens, seed=4)


def test_round_trip_exact_f32(tmp_path, model):
    path = tmp_path / "m.ckpt"
    state = np.random.default_rng(0).bit_generator.state
    save_checkpoint(path, model, rng_state=state, extra={"note": 1})
    loaded, header = load_checkpoint(path)
    assert header["version"] == 1
    assert header["rng_state"] == state
    assert header["extra"] == {"note": 1}
    assert header["config_hash"] == config_hash(model.cfg)
    assert ModelConfig.from_dict(header["config"]) == model.cfg
    assert loaded.vocab.classes == model.vocab.classes
    assert loaded.token_vocab == model.token_vocab
    assert loaded.params.keys() == model.params.keys()
    for k, p in model.params.items():
        want = p.values.astype("<f4").astype(np.float64)
        assert np.array_equal(loaded.params[k].values, want), k
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_resave_is_byte_stable(tmp_path, model):
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(a, model)
    loaded, _ = load_checkpoint(a)
    save_checkpoint(b, loaded)
    # params are f32-exact after one round trip, so bytes cannot drift
    assert a.read_bytes() == b.read_bytes()
    assert file_sha256(a) == file_sha256(b)


def test_config_hash_distinguishes_configs(model):
    assert config_hash(_tiny_cfg()) == config_hash(_tiny_cfg())
    assert config_hash(_tiny_cfg()) != config_hash(_tiny_cfg(use_graph=False))


def test_file_sha256_matches_contents(tmp_path):
    f = tmp_path / "blob"
    f.write_bytes(b"hello world")
    import hashlib
    assert file_sha256(f) == hashlib.sha256(b"hello world").hexdigest()


def test_rejects_bad_magic(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 17])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(raw[: len(MAGIC) + 4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_rejects_trailing_bytes(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    with open(path, "ab") as f:
        f.write(b"\x00\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_rejects_unknown_version(tmp_path):
    blob = json.dumps({"version": 2}).encode()
    path = tmp_path / "m.ckpt"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_rejects_corrupt_header_json(tmp_path):
    blob = b"{not json"
    path = tmp_path / "m.ckpt"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
    with pytest.raises(CheckpointError, match="corrupt header"):
        load_checkpoint(path)
