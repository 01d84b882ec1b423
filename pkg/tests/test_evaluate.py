"""Bucketed accuracy accounting and its failure modes."""

import numpy as np
import pytest

from lsvg.data import GenConfig, dataset_vocab, generate_scenes
from lsvg.encoder import EncoderConfig, SALayerSpec
from lsvg.evaluate import BUCKETS, EvalError, EvalReport, evaluate
from lsvg.interaction import InteractionConfig
from lsvg.language import TextConfig, build_token_vocab
from lsvg.model import Model, ModelConfig


def _tiny_cfg():
    enc = EncoderConfig(
        points_per_object=16,
        layers=(SALayerSpec(6, 0.8, 4, (8,)), SALayerSpec(0, 0.0, 0, (16,))),
        fuse_layer_index=2, d_teacher=8, out_dim=16)
    return ModelConfig(
        encoder=enc,
        text=TextConfig(d_model=16, heads=2, blocks=1),
        interaction=InteractionConfig(d_model=16, heads=2, iterations=1))


@pytest.fixture(scope="module")
def dataset():
    return generate_scenes(GenConfig(scenes=8, points_per_object=32), seed=31)


@pytest.fixture(scope="module")
def model(dataset):
    vocab = dataset_vocab(dataset)
    tokens = build_token_vocab([s.utterance for s in dataset], vocab.classes)
    return Model.build(_tiny_cfg(), vocab, tokens, seed=6)


def test_report_arithmetic():
    rep = EvalReport(total=10, correct=7,
                     counts={"easy": 6, "hard": 4, "view_dep": 0,
                             "view_indep": 10},
                     correct_by_bucket={"easy": 5, "hard": 2, "view_dep": 0,
                                        "view_indep": 7},
                     chance=0.15)
    assert rep.overall == 0.7
    assert rep.accuracy("easy") == pytest.approx(5 / 6)
    assert rep.accuracy("view_dep") == 0.0  # empty bucket reads as zero
    d = rep.to_dict()
    assert d["overall"] == 0.7 and d["chance"] == 0.15
    assert set(BUCKETS) <= set(d)
    assert d["hard"] == {"count": 4, "accuracy": 0.5}


def test_evaluate_accounting(model, dataset):
    rep = evaluate(model, dataset)
    assert rep.total == len(dataset)
    assert 0 <= rep.correct <= rep.total
    # difficulty and view both partition the dataset
    assert rep.counts["easy"] + rep.counts["hard"] == rep.total
    assert rep.counts["view_dep"] + rep.counts["view_indep"] == rep.total
    for b in BUCKETS:
        assert 0 <= rep.correct_by_bucket[b] <= rep.counts[b]
    assert rep.correct_by_bucket["easy"] + rep.correct_by_bucket["hard"] \
        == rep.correct
    want_chance = np.mean([1.0 / len(s.scene.objects) for s in dataset])
    assert rep.chance == pytest.approx(want_chance, abs=0)


def test_evaluate_deterministic(model, dataset):
    a = evaluate(model, dataset)
    b = evaluate(model, dataset)
    assert a.to_dict() == b.to_dict()


def test_evaluate_rejects_empty(model):
    with pytest.raises(EvalError):
        evaluate(model, [])


def test_evaluate_rejects_unknown_classes(model):
    other = generate_scenes(
        GenConfig(classes=("table", "sofa", "lamp", "cabinet", "bed"),
                  scenes=4, points_per_object=32), seed=1)
    present = {c for s in other for c in s.scene.classes}
    assert present - set(model.vocab.classes), "fixture must add a new class"
    with pytest.raises(EvalError, match="missing from checkpoint"):
        evaluate(model, other)
