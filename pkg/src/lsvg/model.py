"""Full grounding model: encoder + text encoder + alignment projections +
scene graph + interaction, with config (de)serialization for checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import DiffArray, MlpSpec
from .alignment import TeacherStore
from .data import GroundingSample, Scene
from .encoder import (EncoderConfig, SALayerSpec, classify_object,
                      encode_objects, init_encoder)
from .geometry import select_view
from .interaction import (GroundingResult, InteractionConfig, ground,
                          init_interaction, interact)
from .language import (ClassVocabulary, TextConfig, TextEncoder, Utterance,
                       analyze_utterance, classify_text_target,
                       init_text_class_head)
from .scenegraph import SceneGraph, build_graph, predict_object_classes


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    text: TextConfig
    interaction: InteractionConfig
    use_graph: bool = True

    def __post_init__(self):
        if self.text.d_model != self.interaction.d_model:
            raise ModelError("text and interaction d_model must agree")
        if self.encoder.out_dim != self.interaction.d_model:
            raise ModelError("encoder out_dim must equal interaction d_model")

    @property
    def d_model(self) -> int:
        return self.interaction.d_model

    @property
    def d_teacher(self) -> int:
        return self.encoder.d_teacher

    @staticmethod
    def desk(d_teacher: int = 32, use_graph: bool = True) -> "ModelConfig":
        return ModelConfig(encoder=EncoderConfig.desk(d_teacher=d_teacher),
                           text=TextConfig(d_model=64, heads=8, blocks=2),
                           interaction=InteractionConfig(d_model=64, heads=8,
                                                         iterations=2),
                           use_graph=use_graph)

    def to_dict(self) -> dict:
        return {
            "encoder": {
                "points_per_object": self.encoder.points_per_object,
                "layers": [[s.num_seeds, s.radius, s.max_neighbors,
                            list(s.widths)] for s in self.encoder.layers],
                "fuse_layer_index": self.encoder.fuse_layer_index,
                "d_teacher": self.encoder.d_teacher,
                "out_dim": self.encoder.out_dim,
            },
            "text": {"d_model": self.text.d_model, "heads": self.text.heads,
                     "blocks": self.text.blocks, "ffn_mult": self.text.ffn_mult},
            "interaction": {"d_model": self.interaction.d_model,
                            "heads": self.interaction.heads,
                            "iterations": self.interaction.iterations,
                            "angles": list(self.interaction.angles)},
            "use_graph": self.use_graph,
        }

    @staticmethod
    def from_dict(raw: dict) -> "ModelConfig":
        enc = raw["encoder"]
        return ModelConfig(
            encoder=EncoderConfig(
                points_per_object=enc["points_per_object"],
                layers=tuple(SALayerSpec(s[0], s[1], s[2], tuple(s[3]))
                             for s in enc["layers"]),
                fuse_layer_index=enc["fuse_layer_index"],
                d_teacher=enc["d_teacher"],
                out_dim=enc["out_dim"]),
            text=TextConfig(**raw["text"]),
            interaction=InteractionConfig(
                d_model=raw["interaction"]["d_model"],
                heads=raw["interaction"]["heads"],
                iterations=raw["interaction"]["iterations"],
                angles=tuple(raw["interaction"]["angles"])),
            use_graph=raw["use_graph"],
        )


@dataclass
class ScenePass:
    """Everything one scene's forward pass produces."""

    f_p: DiffArray            # (n, out_dim)
    f_o: DiffArray            # (n, out_dim)
    utterance: Utterance
    sentence_emb: DiffArray
    token_embs: DiffArray
    predicted_classes: np.ndarray
    graph: SceneGraph
    logits: DiffArray         # (n, 1) grounding scores
    scores: np.ndarray
    predicted_id: int
    cross_snaps: list[np.ndarray] = field(default_factory=list)
    graph_snaps: list[np.ndarray] = field(default_factory=list)

    def result(self) -> GroundingResult:
        return GroundingResult(scores=self.scores,
                               predicted_id=self.predicted_id,
                               logits=self.logits,
                               cross_attention=self.cross_snaps,
                               graph_attention=self.graph_snaps,
                               node_ids=list(self.graph.node_ids))


class Model:
    """Parameter container plus the per-scene forward pass."""

    def __init__(self, cfg: ModelConfig, vocab: ClassVocabulary,
                 token_vocab: list[str], params: dict[str, DiffArray]):
        self.cfg = cfg
        self.vocab = vocab
        self.token_vocab = token_vocab
        self.params = params
        self.text_encoder = TextEncoder(cfg.text, token_vocab)

    @staticmethod
    def build(cfg: ModelConfig, vocab: ClassVocabulary,
              token_vocab: list[str], seed: int) -> "Model":
        rng = np.random.default_rng((seed, 0))
        params: dict[str, DiffArray] = {}
        params.update(init_encoder(cfg.encoder, len(vocab), rng))
        text_enc = TextEncoder(cfg.text, token_vocab)
        params.update(text_enc.init_params(rng))
        params.update(init_text_class_head(cfg.text.d_model, len(vocab), rng))
        params.update(init_interaction(cfg.interaction, rng))
        d_t = cfg.d_teacher
        params.update(nm.init_mlp(MlpSpec((d_t,), "none"), cfg.encoder.out_dim,
                                  rng, prefix="align.proj_p"))
        params.update(nm.init_mlp(MlpSpec((d_t,), "none"), cfg.text.d_model,
                                  rng, prefix="align.proj_t"))
        params["align.log_tau"] = DiffArray(
            np.array(np.log(0.07)), requires_grad=True)
        return Model(cfg, vocab, token_vocab, params)

    @property
    def log_tau(self) -> DiffArray:
        return self.params["align.log_tau"]

    def proj_points(self, f_p: DiffArray) -> DiffArray:
        """Object features mapped into the shared alignment space."""
        return nm.mlp_forward(f_p, MlpSpec((self.cfg.d_teacher,), "none"),
                              self.params, prefix="align.proj_p")

    def proj_text(self, rows: DiffArray) -> DiffArray:
        """Text features mapped into the shared alignment space."""
        return nm.mlp_forward(rows, MlpSpec((self.cfg.d_teacher,), "none"),
                              self.params, prefix="align.proj_t")

    def encode_prompts(self) -> DiffArray:
        return self.text_encoder.encode_prompts(self.vocab, self.params)

    def classify_objects(self, f_o: DiffArray) -> DiffArray:
        return classify_object(f_o, self.params)

    def classify_text(self, sentence_emb: DiffArray) -> DiffArray:
        return classify_text_target(sentence_emb, self.params)

    def fusion_vectors(self, scene: Scene, teacher: TeacherStore | None
                       ) -> list[np.ndarray] | None:
        """Max-coverage-view teacher embedding per object, or None."""
        if teacher is None:
            return None
        return [teacher.object_emb(
            scene.scene_id, o.object_id,
            select_view(o.object_id, scene.views), o.class_name)
            for o in scene.objects]

    def ground_scene(self, scene: Scene, f_p: DiffArray, f_o: DiffArray,
                     utterance: str, prompts: DiffArray,
                     prompts_projected: DiffArray) -> ScenePass:
        """Graph construction, interaction, and grounding for one scene.

        f_p/f_o are this scene's encoder outputs; prompts (and their
        alignment-space projection) come from the current text parameters.
        """
        utt = analyze_utterance(utterance, self.vocab)
        text_enc = self.text_encoder.encode(utt.tokens, self.params)
        n = len(scene.objects)
        predicted = predict_object_classes(self.proj_points(f_p),
                                           prompts_projected)
        matched = utt.matched_classes if self.cfg.use_graph else set()
        graph = build_graph(predicted, matched, n)
        refined, cross_snaps, graph_snaps = interact(
            f_o, scene.boxes, graph, text_enc.token_embs,
            self.cfg.interaction, self.params)
        logits, scores, pred = ground(refined, text_enc.sentence_emb,
                                      self.params)
        return ScenePass(f_p=f_p, f_o=f_o, utterance=utt,
                         sentence_emb=text_enc.sentence_emb,
                         token_embs=text_enc.token_embs,
                         predicted_classes=predicted, graph=graph,
                         logits=logits, scores=scores, predicted_id=pred,
                         cross_snaps=cross_snaps, graph_snaps=graph_snaps)


def forward_scene(model: Model, sample: GroundingSample,
                  teacher: TeacherStore | None = None,
                  rng: np.random.Generator | None = None) -> ScenePass:
    """Single-scene forward pass (evaluation / CLI path).

    With no teacher the enhanced branch runs unfused, which is the
    image-free inference mode; training uses the batched path instead.
    """
    scene = sample.scene
    fusion = model.fusion_vectors(scene, teacher)
    f_p, _, f_o = encode_objects([o.cloud.points for o in scene.objects],
                                 model.cfg.encoder, model.params,
                                 teacher_vecs=fusion, rng=rng)
    prompts = model.encode_prompts()
    return model.ground_scene(scene, f_p, f_o, sample.utterance, prompts,
                              model.proj_text(prompts))
