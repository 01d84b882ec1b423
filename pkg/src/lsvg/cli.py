"""Command line entry points.

Subcommands cover the whole loop: synthesize scene data, synthesize a
teacher embedding file, train, evaluate, and inspect single scenes
(``ground`` prints scores, ``graph`` prints the relation graph).

Exit codes: 0 on success, 2 on any validation/input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .alignment import (AlignmentError, TeacherStore, load_teacher,
                        materialize_teacher, save_teacher, synth_teacher)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (CLASS_PRIORS, DataError, GenConfig, GroundingSample,
                   generate_scenes, read_dataset, sample_from_dict,
                   scene_from_dict, write_dataset)
from .encoder import EncoderError
from .evaluate import EvalError, evaluate
from .geometry import GeometryError
from .interaction import InteractionError
from .language import ClassVocabulary, LanguageError
from .model import Model, ModelConfig, ModelError, forward_scene
from .numerics import NumericsError
from .scenegraph import SceneGraphError
from .train import TrainConfig, TrainError, train

_USER_ERRORS = (AlignmentError, CheckpointError, DataError, EncoderError,
                EvalError, GeometryError, InteractionError, LanguageError,
                ModelError, NumericsError, SceneGraphError, TrainError,
                FileNotFoundError, IsADirectoryError, PermissionError)


class CliError(ValueError):
    pass


# -- shared loaders ----------------------------------------------------------

def _read_json(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise CliError(f"{path}: expected a JSON object")
    return raw


def _load_scene_sample(path: str, text: str) -> GroundingSample:
    """One scene from a JSON file (or the first line of a JSONL dataset),
    paired with the query text. Any stored utterance/target is ignored."""
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f if ln.strip()]
    if not lines:
        raise CliError(f"{path}: empty scene file")
    try:
        raw = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON ({e})") from e
    scene = scene_from_dict(raw, where=str(path))
    if not text.strip():
        raise CliError("query text is empty")
    return GroundingSample(scene=scene, utterance=text,
                           target_id=scene.objects[0].object_id, tags={})


def _model_config(raw: dict | None, teacher_dim: int) -> ModelConfig:
    raw = raw or {}
    if "model_config" in raw:
        return ModelConfig.from_dict(raw["model_config"])
    profile = raw.get("profile", "desk")
    if profile != "desk":
        raise CliError(f"unknown model profile {profile!r}")
    return ModelConfig.desk(d_teacher=raw.get("d_teacher", teacher_dim),
                            use_graph=raw.get("use_graph", True))


# -- subcommands -------------------------------------------------------------

def cmd_gen_scenes(args) -> int:
    classes = list(CLASS_PRIORS)
    if not 5 <= args.classes <= len(classes):
        raise CliError(f"--classes must be in [5, {len(classes)}]")
    cfg = GenConfig(classes=tuple(classes[: args.classes]), scenes=args.scenes)
    samples = generate_scenes(cfg, args.seed)
    out = Path(args.out)
    write_dataset(samples, out)
    vocab = ClassVocabulary(classes=sorted(cfg.classes))
    vocab_path = out.with_suffix(".vocab.json")
    vocab.to_json(vocab_path)
    print(f"wrote {len(samples)} scenes to {out} (vocab: {vocab_path})")
    return 0


def cmd_teacher_synth(args) -> int:
    vocab = ClassVocabulary.from_json(args.vocab)
    store = synth_teacher(vocab, args.dim, args.sigma, args.seed)
    if args.data:
        samples = read_dataset(args.data)
        if any(o.class_name is None
               for s in samples for o in s.scene.objects):
            raise CliError(f"{args.data}: unlabeled objects; teacher "
                           "synthesis needs class names")
        triples = [(s.scene.scene_id, o.object_id, v.view_id, o.class_name)
                   for s in samples
                   for o in s.scene.objects
                   for v in s.scene.views]
        store = materialize_teacher(store, triples)
    save_teacher(store, args.out)
    print(f"wrote teacher file {args.out} "
          f"(dim={store.dim}, prompts={len(store.prompt_embs)}, "
          f"objects={len(store.object_embs)})")
    return 0


def cmd_train(args) -> int:
    samples = read_dataset(args.data)
    teacher = load_teacher(args.teacher)
    raw_cfg = _read_json(args.config) if args.config else {}
    try:
        train_cfg = TrainConfig.from_dict(raw_cfg.get("train", {}))
    except TypeError as e:
        raise CliError(f"bad train config: {e}") from e
    model_cfg = _model_config(raw_cfg, teacher.dim)
    log = None if args.quiet else print
    t0 = time.time()
    model, history, rng = train(train_cfg, model_cfg, samples, teacher,
                                snapshot_path=args.snapshot, log=log)
    save_checkpoint(args.out, model,
                    rng_state=rng.bit_generator.state,
                    extra={"train_config": train_cfg.to_dict(),
                           "final_loss": history[-1]["loss"],
                           "final_acc": history[-1]["acc"]})
    print(f"trained {train_cfg.epochs} epochs on {len(samples)} scenes "
          f"in {time.time() - t0:.1f}s; checkpoint: {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    samples = read_dataset(args.data)
    teacher = load_teacher(args.teacher) if args.teacher else None
    report = evaluate(model, samples, teacher=teacher)
    payload = report.to_dict()
    if args.report:
        Path(args.report).write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"overall {report.overall:.4f} on {report.total} samples "
          f"(chance {report.chance:.4f})")
    for bucket in ("easy", "hard", "view_dep", "view_indep"):
        print(f"  {bucket:<11} {report.accuracy(bucket):.4f} "
              f"({payload[bucket]['count']})")
    return 0


def _attention_pairs(sp, k: int = 10) -> list[dict]:
    """Strongest node-to-node links in the final relation attention pass,
    averaged over heads."""
    if not sp.graph_snaps or sp.graph.num_nodes < 2:
        return []
    att = np.mean(sp.graph_snaps[-1], axis=0)
    ids = sp.graph.node_ids
    pairs = [(float(att[i, j]), ids[i], ids[j])
             for i in range(len(ids)) for j in range(len(ids)) if i != j]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    return [{"from": a, "to": b, "weight": round(w, 6)}
            for w, a, b in pairs[:k]]


def cmd_ground(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    sample = _load_scene_sample(args.scene, args.text)
    sp = forward_scene(model, sample)
    payload = {
        "predicted_id": sp.predicted_id,
        "scores": [round(float(s), 6) for s in sp.scores],
        "object_ids": [o.object_id for o in sample.scene.objects],
        "matched_classes": sorted(model.vocab.name(c)
                                  for c in sp.utterance.matched_classes),
        "nodes": list(sp.graph.node_ids),
    }
    if args.attention:
        payload["attention"] = _attention_pairs(sp)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_graph(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    sample = _load_scene_sample(args.scene, args.text)
    sp = forward_scene(model, sample)
    payload = {
        "nodes": list(sp.graph.node_ids),
        "edges": [[int(a), int(b)] for a, b in sp.graph.edge_list()],
        "matched_classes": sorted(model.vocab.name(c)
                                  for c in sp.utterance.matched_classes),
    }
    print(json.dumps(payload, indent=2))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsvg",
                                description="Language-guided 3D scene "
                                            "grounding toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="synthesize a JSONL scene dataset")
    g.add_argument("--out", required=True, help="output JSONL path")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--scenes", type=int, default=100)
    g.add_argument("--classes", type=int, default=5,
                   help="number of object classes (5..8)")
    g.set_defaults(fn=cmd_gen_scenes)

    t = sub.add_parser("teacher-synth",
                       help="synthesize a teacher embedding file")
    t.add_argument("--vocab", required=True, help="vocabulary JSON")
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--sigma", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--data", default=None,
                   help="optional dataset; when given, per-object view "
                        "embeddings are materialized into the file")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_teacher_synth)

    tr = sub.add_parser("train", help="train a grounding model")
    tr.add_argument("--data", required=True, help="training JSONL")
    tr.add_argument("--teacher", required=True, help="teacher embedding JSON")
    tr.add_argument("--config", default=None,
                    help="JSON with optional 'train' and model settings")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--snapshot", default=None,
                    help="where to dump diagnostics if the loss blows up")
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--teacher", default=None,
                    help="optional teacher file (off = image-free inference)")
    ev.add_argument("--report", default=None, help="write report JSON here")
    ev.set_defaults(fn=cmd_eval)

    gr = sub.add_parser("ground", help="ground a query in one scene")
    gr.add_argument("--ckpt", required=True)
    gr.add_argument("--scene", required=True,
                    help="scene JSON (or first line of a JSONL dataset)")
    gr.add_argument("--text", required=True)
    gr.add_argument("--attention", action="store_true",
                    help="include the strongest relation-attention pairs")
    gr.set_defaults(fn=cmd_ground)

    gp = sub.add_parser("graph", help="print the relation graph for a query")
    gp.add_argument("--ckpt", required=True)
    gp.add_argument("--scene", required=True)
    gp.add_argument("--text", required=True)
    gp.set_defaults(fn=cmd_graph)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, *_USER_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
