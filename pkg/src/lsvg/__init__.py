"""Language-guided grounding of objects in synthetic 3D scenes.

Pipeline: a dual-branch point encoder (geometry branch plus a branch
enhanced with projected 2D teacher features), a relation graph over
text-matched candidates, iterative text/graph attention, and a scoring
head that picks the referred object.
"""

from .alignment import (AlignmentError, TeacherStore, alignment_loss,
                        contrastive_loss, load_teacher, materialize_teacher,
                        save_teacher, serialize_teacher, synth_teacher)
from .checkpoint import (CheckpointError, config_hash, file_sha256,
                         load_checkpoint, save_checkpoint)
from .data import (CLASS_PRIORS, DataError, GenConfig, GroundingSample,
                   Scene, dataset_vocab, generate_sample, generate_scenes,
                   read_dataset, sample_from_dict, sample_to_dict,
                   scene_from_dict, write_dataset)
from .encoder import (EncoderConfig, EncoderError, ObjectEncoding,
                      SALayerSpec, encode_object, encode_objects,
                      init_encoder)
from .evaluate import EvalError, EvalReport, evaluate
from .geometry import (Box3D, GeometryError, ObjectProposal, PointCloud,
                       ViewMeta, ball_group, farthest_point_sample,
                       select_view, synthesize_views)
from .interaction import (GroundingResult, InteractionConfig,
                          InteractionError, cross_attention, ground,
                          init_interaction, interact)
from .language import (ClassVocabulary, LanguageError, TextConfig,
                       TextEncoder, Utterance, analyze_utterance,
                       build_prompt, build_token_vocab)
from .model import Model, ModelConfig, ModelError, ScenePass, forward_scene
from .scenegraph import (GraphAttentionConfig, SceneGraph, SceneGraphError,
                         build_graph, graph_attention,
                         init_graph_attention, predict_object_classes)
from .train import TrainConfig, TrainError, lr_at, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "Box3D", "CLASS_PRIORS", "CheckpointError",
    "ClassVocabulary", "DataError", "EncoderConfig", "EncoderError",
    "EvalError", "EvalReport", "GenConfig", "GeometryError",
    "GraphAttentionConfig", "GroundingResult", "GroundingSample",
    "InteractionConfig", "InteractionError", "LanguageError", "Model",
    "ModelConfig", "ModelError", "ObjectEncoding", "ObjectProposal",
    "PointCloud", "SALayerSpec", "Scene", "SceneGraph", "SceneGraphError",
    "ScenePass", "TeacherStore", "TextConfig", "TextEncoder", "TrainConfig",
    "TrainError", "Utterance", "ViewMeta", "alignment_loss",
    "analyze_utterance", "ball_group", "build_graph", "build_prompt",
    "build_token_vocab", "config_hash", "contrastive_loss",
    "cross_attention", "dataset_vocab", "encode_object", "encode_objects",
    "evaluate", "farthest_point_sample", "file_sha256", "forward_scene",
    "generate_sample", "generate_scenes", "graph_attention", "ground",
    "init_encoder", "init_graph_attention", "init_interaction", "interact",
    "load_checkpoint", "load_teacher", "lr_at", "materialize_teacher",
    "read_dataset", "sample_from_dict", "sample_to_dict", "save_checkpoint",
    "save_teacher", "scene_from_dict", "select_view", "serialize_teacher",
    "synth_teacher", "synthesize_views", "total_loss", "train",
    "write_dataset",
]
