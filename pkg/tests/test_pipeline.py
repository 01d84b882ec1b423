"""Training pipeline: loss composition, lr schedule, noisy-object sampling,
Adam, and short deterministic end-to-end runs on a tiny model."""

import numpy as np
import pytest

from lsvg import numerics as nm
from lsvg.alignment import synth_teacher
from lsvg.data import GenConfig, Scene, dataset_vocab, generate_scenes
from lsvg.encoder import EncoderConfig, SALayerSpec
from lsvg.interaction import InteractionConfig
from lsvg.language import TextConfig, build_token_vocab
from lsvg.model import Model, ModelConfig
from lsvg.train import (Adam, TrainConfig, TrainError, hybrid_sample, lr_at,
                        perturb_objects, total_loss, train, train_step)


def _tiny_model_cfg(d_teacher=8, use_graph=True):
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
def tiny_dataset():
    return generate_scenes(GenConfig(scenes=6, points_per_object=32), seed=11)


@pytest.fixture(scope="module")
def tiny_teacher(tiny_dataset):
    return synth_teacher(dataset_vocab(tiny_dataset), d_teacher=8,
                         noise_sigma=0.1, seed=0)


# -- config ---------------------------------------------------------------------

def test_train_config_defaults():
    cfg = TrainConfig.desk()
    assert cfg.epochs == 20
    assert cfg.batch_size == 16
    assert cfg.lr == 5e-4
    assert cfg.lr_decay == 0.65
    assert (cfg.decay_start, cfg.decay_end, cfg.decay_every) == (30, 80, 10)
    assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (0.5, 0.1, 0.5)
    assert TrainConfig.paper().epochs == 100


@pytest.mark.parametrize("kwargs", [
    dict(lambda1=0.0), dict(lambda2=1.0), dict(lambda3=-0.1),
    dict(lr=0.0), dict(hybrid_gt_prob=1.5), dict(epochs=0),
    dict(batch_size=0),
])
def test_train_config_rejects(kwargs):
    with pytest.raises(TrainError):
        TrainConfig.desk(**kwargs)


def test_train_config_round_trip():
    cfg = TrainConfig.desk(seed=13, epochs=5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- lr schedule ------------------------------------------------------------------

def test_lr_schedule_steps():
    cfg = TrainConfig.desk()
    assert lr_at(cfg, 1) == 5e-4
    assert lr_at(cfg, 29) == 5e-4
    assert lr_at(cfg, 30) == 5e-4          # first step fires at start+every
    assert lr_at(cfg, 39) == 5e-4
    assert lr_at(cfg, 40) == pytest.approx(5e-4 * 0.65, abs=0)
    assert lr_at(cfg, 50) == pytest.approx(5e-4 * 0.65 ** 2, abs=0)
    assert lr_at(cfg, 80) == pytest.approx(5e-4 * 0.65 ** 5, abs=0)
    assert lr_at(cfg, 200) == lr_at(cfg, 80)  # decay freezes past the window


# -- loss composition ---------------------------------------------------------------

def test_total_loss_weights_unit_terms():
    # 0.5 * 1 + 1 + 0.1 * 1 + 0.5 * 1
    out = total_loss(1.0, 1.0, 1.0, 1.0, 0.5, 0.1, 0.5)
    assert out.item() == pytest.approx(2.1, abs=1e-12)


def test_total_loss_gradients_are_weights():
    terms = [nm.DiffArray(np.array(v), requires_grad=True)
             for v in (0.3, 1.2, 0.9, 2.0)]
    out = total_loss(*terms, 0.5, 0.1, 0.5)
    out.backward()
    got = [t.grad.item() for t in terms]
    assert got == [0.5, 1.0, 0.1, 0.5]


# -- noisy objects --------------------------------------------------------------------

def test_perturb_moves_cloud_and_box_together(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    out = perturb_objects(objs, np.random.default_rng(0), center_sigma=0.05,
                          drop_fraction=0.0)
    for before, after in zip(objs, out):
        shift = after.box.center - before.box.center
        np.testing.assert_allclose(
            after.cloud.points[:, :3] - before.cloud.points[:, :3],
            np.broadcast_to(shift, before.cloud.points[:, :3].shape),
            atol=1e-12)
        assert after.object_id == before.object_id
        assert after.class_name == before.class_name
        assert np.array_equal(after.box.size, before.box.size)
        assert after.box.yaw == before.box.yaw
        # colors ride along untouched
        np.testing.assert_array_equal(after.cloud.points[:, 3:],
                                      before.cloud.points[:, 3:])


def test_perturb_drops_points(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    out = perturb_objects(objs, np.random.default_rng(1), center_sigma=0.0,
                          drop_fraction=0.25)
    for before, after in zip(objs, out):
        n = before.cloud.points.shape[0]
        assert after.cloud.points.shape[0] == n - int(round(0.25 * n))
        # kept rows are a subset of the originals (sigma 0: values unchanged)
        before_set = {tuple(r) for r in before.cloud.points}
        assert all(tuple(r) in before_set for r in after.cloud.points)


def test_perturb_keeps_at_least_one_point(tiny_dataset):
    objs = tiny_dataset[0].scene.objects[:1]
    out = perturb_objects(objs, np.random.default_rng(2), drop_fraction=1.0)
    assert out[0].cloud.points.shape[0] == 1


def test_perturb_offset_statistics(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    rng = np.random.default_rng(3)
    shifts = []
    for _ in range(60):
        for before, after in zip(objs, perturb_objects(
                objs, rng, center_sigma=0.05, drop_fraction=0.0)):
            shifts.extend(after.box.center - before.box.center)
    sd = np.std(shifts)
    assert 0.04 < sd < 0.06, sd


def test_hybrid_extremes(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    twins = perturb_objects(objs, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    assert all(a is b for a, b in
               zip(hybrid_sample(objs, twins, 1.0, rng), objs))
    assert all(a is b for a, b in
               zip(hybrid_sample(objs, twins, 0.0, rng), twins))


def test_hybrid_mixes(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    twins = perturb_objects(objs, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    picks = [o for _ in range(40)
             for o in hybrid_sample(objs, twins, 0.5, rng)]
    n_gt = sum(any(p is o for o in objs) for p in picks)
    assert 0 < n_gt < len(picks)


def test_hybrid_rejects_mismatch(tiny_dataset):
    objs = tiny_dataset[0].scene.objects
    with pytest.raises(TrainError):
        hybrid_sample(objs, objs[:-1], 0.5, np.random.default_rng(0))


# -- optimizer ------------------------------------------------------------------------

def test_adam_first_step_is_signed_lr():
    p = nm.DiffArray(np.zeros(3), requires_grad=True)
    p.grad = np.array([1.0, -2.0, 0.5])
    opt = Adam({"p": p})
    opt.step(lr=0.1)
    # bias-corrected m/v give g / |g| on the first step
    np.testing.assert_allclose(p.values, [-0.1, 0.1, -0.1], atol=1e-6)


def test_adam_skips_gradless_params():
    p = nm.DiffArray(np.ones(2), requires_grad=True)
    q = nm.DiffArray(np.ones(2), requires_grad=True)
    q.grad = np.ones(2)
    opt = Adam({"p": p, "q": q})
    opt.step(lr=0.05)
    assert np.array_equal(p.values, np.ones(2))
    assert not np.array_equal(q.values, np.ones(2))


# -- end-to-end on a tiny model ---------------------------------------------------------

def _build_tiny(samples, teacher, seed=3, use_graph=True):
    vocab = dataset_vocab(samples)
    tokens = build_token_vocab([s.utterance for s in samples], vocab.classes)
    return Model.build(_tiny_model_cfg(use_graph=use_graph), vocab, tokens,
                       seed)


def test_train_step_smoke(tiny_dataset, tiny_teacher):
    model = _build_tiny(tiny_dataset, tiny_teacher)
    info = train_step(model, tiny_dataset[:2], tiny_teacher,
                      TrainConfig.desk(batch_size=2),
                      np.random.default_rng(0))
    for key in ("loss", "l_ot", "l_ref", "l_t", "l_of", "acc"):
        assert np.isfinite(info[key]), info
    assert any(p.grad is not None and np.any(p.grad)
               for p in model.params.values())


def test_train_loss_decreases(tiny_dataset, tiny_teacher):
    cfg = TrainConfig.desk(epochs=8, batch_size=3, seed=3, lr=2e-3)
    _, history, _ = train(cfg, _tiny_model_cfg(), tiny_dataset, tiny_teacher)
    assert len(history) == 8
    assert history[-1]["loss"] < history[0]["loss"], history


def test_train_is_deterministic(tiny_dataset, tiny_teacher):
    cfg = TrainConfig.desk(epochs=2, batch_size=3, seed=5)
    m1, h1, r1 = train(cfg, _tiny_model_cfg(), tiny_dataset, tiny_teacher)
    m2, h2, r2 = train(cfg, _tiny_model_cfg(), tiny_dataset, tiny_teacher)
    assert all(a["loss"] == b["loss"] and a["acc"] == b["acc"]
               for a, b in zip(h1, h2))  # elapsed differs; the math must not
    assert m1.params.keys() == m2.params.keys()
    for k in m1.params:
        assert np.array_equal(m1.params[k].values, m2.params[k].values), k
    assert r1.bit_generator.state == r2.bit_generator.state


def test_train_rejects_empty_and_dim_mismatch(tiny_dataset, tiny_teacher):
    with pytest.raises(TrainError):
        train(TrainConfig.desk(), _tiny_model_cfg(), [], tiny_teacher)
    with pytest.raises(TrainError):
        train(TrainConfig.desk(epochs=1), _tiny_model_cfg(d_teacher=9),
              tiny_dataset, tiny_teacher)
