"""Full-model assembly: config wiring, seeded build determinism, and the
single-scene forward pass with and without the relational graph."""

import math

import numpy as np
import pytest

from lsvg.alignment import synth_teacher
from lsvg.data import GenConfig, dataset_vocab, generate_scenes
from lsvg.encoder import EncoderConfig, SALayerSpec
from lsvg.interaction import InteractionConfig
from lsvg.language import TextConfig, build_token_vocab
from lsvg.model import Model, ModelConfig, ModelError, forward_scene


def _tiny_cfg(use_graph=True, d_teacher=8):
    enc = EncoderConfig(
        points_per_object=16,
        layers=(SALayerSpec(6, 0.8, 4, (8,)), SALayerSpec(0, 0.0, 0, (16,))),
        fuse_layer_index=2, d_teacher=d_teacher, out_dim=16)
    return ModelConfig(
        encoder=enc,
        text=TextConfig(d_model=16, heads=2, blocks=1),
        interaction=InteractionConfig(d_model=16, heads=2, iterations=1),
        use_graph=use_graph)


@pytest.fixture(scope="module")
def dataset():
    return generate_scenes(GenConfig(scenes=4, points_per_object=32), seed=21)


@pytest.fixture(scope="module")
def model(dataset):
    vocab = dataset_vocab(dataset)
    tokens = build_token_vocab([s.utterance for s in dataset], vocab.classes)
    return Model.build(_tiny_cfg(), vocab, tokens, seed=1)


def test_desk_profile_pins():
    cfg = ModelConfig.desk()
    assert cfg.d_model == 64
    assert cfg.encoder.points_per_object == 128
    assert cfg.encoder.num_sa_layers == 2
    assert cfg.encoder.layers[0].widths[-1] == 32
    assert cfg.encoder.layers[1].widths[-1] == 64
    assert cfg.use_graph


def test_config_wiring_rejected():
    enc = EncoderConfig(
        points_per_object=16,
        layers=(SALayerSpec(6, 0.8, 4, (8,)), SALayerSpec(0, 0.0, 0, (16,))),
        fuse_layer_index=2, d_teacher=8, out_dim=16)
    with pytest.raises(ModelError):
        ModelConfig(encoder=enc, text=TextConfig(d_model=32, heads=2),
                    interaction=InteractionConfig(d_model=16, heads=2))
    with pytest.raises(ModelError):
        ModelConfig(encoder=enc, text=TextConfig(d_model=32, heads=2),
                    interaction=InteractionConfig(d_model=32, heads=2))


def test_config_round_trip():
    cfg = _tiny_cfg()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    desk = ModelConfig.desk(d_teacher=32)
    assert ModelConfig.from_dict(desk.to_dict()) == desk


def test_build_is_seeded(model, dataset):
    vocab = dataset_vocab(dataset)
    tokens = build_token_vocab([s.utterance for s in dataset], vocab.classes)
    twin = Model.build(_tiny_cfg(), vocab, tokens, seed=1)
    other = Model.build(_tiny_cfg(), vocab, tokens, seed=2)
    assert model.params.keys() == twin.params.keys()
    for k in model.params:
        assert np.array_equal(model.params[k].values, twin.params[k].values), k
    assert any(not np.array_equal(model.params[k].values,
                                  other.params[k].values)
               for k in model.params)


def test_temperature_initialization(model):
    assert model.log_tau.values == pytest.approx(math.log(0.07), abs=0)
    assert model.log_tau.requires_grad


def test_forward_scene_shapes(model, dataset):
    sample = dataset[0]
    sp = forward_scene(model, sample)
    n = len(sample.scene.objects)
    assert sp.f_p.shape == (n, 16) and sp.f_o.shape == (n, 16)
    assert sp.logits.shape == (n, 1)
    assert sp.scores.shape == (n,)
    assert 0 <= sp.predicted_id < n
    assert sp.predicted_classes.shape == (n,)
    res = sp.result()
    assert res.predicted_id == sp.predicted_id
    assert res.node_ids == list(sp.graph.node_ids)


def test_forward_scene_deterministic(model, dataset):
    a = forward_scene(model, dataset[0])
    b = forward_scene(model, dataset[0])
    assert np.array_equal(a.scores, b.scores)
    assert a.predicted_id == b.predicted_id


def test_graph_gating(dataset):
    vocab = dataset_vocab(dataset)
    tokens = build_token_vocab([s.utterance for s in dataset], vocab.classes)
    with_graph = Model.build(_tiny_cfg(use_graph=True), vocab, tokens, seed=1)
    without = Model.build(_tiny_cfg(use_graph=False), vocab, tokens, seed=1)
    sample = dataset[0]
    sp_g = forward_scene(with_graph, sample)
    sp_n = forward_scene(without, sample)
    # same weights; only the graph construction is gated off
    assert sp_n.graph.num_nodes == 0 and sp_n.graph_snaps == []
    assert sp_g.graph.num_nodes >= 1  # the utterance names at least one class
    assert len(sp_g.graph_snaps) == with_graph.cfg.interaction.iterations


def test_forward_scene_with_teacher(model, dataset):
    teacher = synth_teacher(model.vocab, d_teacher=8, noise_sigma=0.1, seed=0)
    plain = forward_scene(model, dataset[0])
    fused = forward_scene(model, dataset[0], teacher=teacher)
    assert fused.scores.shape == plain.scores.shape
    # the teacher feeds the fused branch, so scores must move
    assert not np.array_equal(fused.scores, plain.scores)
    vecs = model.fusion_vectors(dataset[0].scene, teacher)
    assert len(vecs) == len(dataset[0].scene.objects)
    assert model.fusion_vectors(dataset[0].scene, None) is None
