"""Command-line front end.

Subcommands: ingest-kg (validate and canonicalize a triple file),
retrieve (rank facts for QA contexts), generate-qa (build a synthetic
dataset from scene annotations), train, eval, and gradcheck (run the
gradient suite). Runtime failures print one `error: ...` line on stderr
and exit 1; bad flags exit 2 via argparse.
"""

from __future__ import annotations

import argparse
import sys

from . import gradsuite
from .config import load_run_config
from .datagen import (dataset_objects, generate_dataset, load_scenes,
                      presence_features)
from .kgstore import GraphLoadError, load_graph, save_graph
from .model import (KdmnModel, MODES, attach_knowledge, build_vocabulary,
                    evaluate, evaluate_ensemble, load_dataset,
                    save_dataset, save_features, train)
from .encoders import Vocabulary
from .retrieval import make_context_query, retrieve


def _add_retrieval_flags(sub):
    sub.add_argument("--decay", type=float, default=None)
    sub.add_argument("--max-hops", type=int, default=None, dest="max_hops")
    sub.add_argument("--top-n", type=int, default=None, dest="top_n")
    sub.add_argument("--visual-mass", type=float, default=None,
                     dest="visual_mass")


def _add_model_flags(sub):
    sub.add_argument("--mode", choices=MODES, default=None)
    sub.add_argument("--image-dim", type=int, default=None, dest="image_dim")
    sub.add_argument("--embed-dim", type=int, default=None, dest="embed_dim")
    sub.add_argument("--hidden", type=int, default=None)
    sub.add_argument("--common", type=int, default=None)
    sub.add_argument("--attention", type=int, default=None)
    sub.add_argument("--episodes", type=int, default=None)
    sub.add_argument("--init-scale", type=float, default=None, dest="init_scale")


def _add_train_flags(sub):
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--stop-at-train-accuracy", type=float, default=None,
                     dest="stop_at_train_accuracy")


_CONFIG_KEYS = ("mode", "image_dim", "embed_dim", "hidden", "common",
                "attention", "episodes", "init_scale", "decay", "max_hops",
                "top_n", "visual_mass", "lr", "batch_size", "epochs", "seed",
                "stop_at_train_accuracy")


def _run_config(args):
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS
                 if getattr(args, k, None) is not None}
    return load_run_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdmn",
        description="Knowledge-backed dynamic memory QA toolkit.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest-kg", help="validate a triple TSV file "
                            "and write it back in canonical sorted form")
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)

    p = commands.add_parser("retrieve", help="rank graph facts for each "
                            "QA context in a JSON-lines file")
    p.add_argument("--graph", required=True)
    p.add_argument("--contexts", required=True,
                   help="JSON lines: image_id, objects[{entity,area}], question")
    p.add_argument("--out", default=None, help="TSV output (default stdout)")
    p.add_argument("--config", default=None)
    _add_retrieval_flags(p)

    p = commands.add_parser("generate-qa", help="generate a synthetic "
                            "multiple-choice dataset from scenes and a graph")
    p.add_argument("--scenes", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--features-out", default=None, dest="features_out",
                   help="also write entity-presence image features here")

    p = commands.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--out", required=True, help="checkpoint path; the "
                   "vocabulary and loss curve are saved next to it")
    p.add_argument("--config", default=None)
    _add_model_flags(p)
    _add_retrieval_flags(p)
    _add_train_flags(p)

    p = commands.add_parser("eval", help="print a checkpoint's accuracy on "
                            "a dataset; several checkpoints form an ensemble")
    p.add_argument("--dataset", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--vocab", default=None,
                   help="default: <first checkpoint>.vocab")
    p.add_argument("--features", default=None)
    p.add_argument("--config", default=None)
    _add_model_flags(p)
    _add_retrieval_flags(p)

    p = commands.add_parser("gradcheck", help="run the central-difference "
                            "gradient suite; exit 0 when every check is below "
                            "the 1e-4 threshold")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_ingest_kg(args) -> int:
    graph = load_graph(args.triples)
    save_graph(graph, args.out)
    relations = {t.relation for t in graph.triples}
    print(f"triples={len(graph.triples)} entities={len(graph.entities)} "
          f"relations={len(relations)}")
    return 0


def _load_contexts_file(path: str) -> list:
    import json
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: bad JSON: {exc}") from None
            rows.append((obj["image_id"],
                         [(o["entity"], float(o["area"]))
                          for o in obj.get("objects", [])],
                         obj["question"]))
    return rows


def _cmd_retrieve(args) -> int:
    cfg = _run_config(args)
    graph = load_graph(args.graph)
    lines = []
    for image_id, objects, question in _load_contexts_file(args.contexts):
        query = make_context_query(graph, objects, question)
        ranked = retrieve(graph, query, cfg.retrieval(), cfg.visual_mass)
        for triple, weight in ranked.triples:
            lines.append(f"{image_id}\t{triple.head}\t{triple.relation}"
                         f"\t{triple.tail}\t{weight:.12g}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_generate_qa(args) -> int:
    scenes = load_scenes(args.scenes)
    graph = load_graph(args.graph)
    items = generate_dataset(scenes, graph, args.count, args.seed)
    if len(items) < args.count:
        print(f"warning: generated only {len(items)} of {args.count} items",
              file=sys.stderr)
    save_dataset(dataset_objects(items), args.out)
    if args.features_out is not None:
        feats = presence_features(scenes, sorted(graph.entities))
        save_features(feats, args.features_out)
    print(f"items={len(items)}")
    return 0


def _prepare_contexts(args, cfg, graph):
    contexts = load_dataset(args.dataset, feature_path=args.features)
    if cfg.mode != "nokg":
        attach_knowledge(contexts, graph, cfg.retrieval(), cfg.visual_mass)
    return contexts


def _cmd_train(args) -> int:
    cfg = _run_config(args)
    graph = load_graph(args.graph)
    contexts = _prepare_contexts(args, cfg, graph)
    vocab = build_vocabulary(contexts, graph)
    model = KdmnModel(cfg.dims(), vocab, mode=cfg.mode, seed=cfg.train().seed,
                      init_scale=cfg.init_scale)
    result = train(model, contexts, cfg.train())
    model.save(args.out)
    vocab.save(args.out + ".vocab")
    with open(args.out + ".losses.tsv", "w", encoding="utf-8") as fh:
        for epoch, (loss, acc) in enumerate(
                zip(result.epoch_losses, result.train_accuracies)):
            fh.write(f"{epoch}\t{loss:.12g}\t{acc:.12g}\n")
    print(f"epochs_run={len(result.epoch_losses)} "
          f"final_loss={result.epoch_losses[-1]:.12g} "
          f"train_accuracy={result.train_accuracies[-1]:.12g}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _run_config(args)
    graph = load_graph(args.graph)
    contexts = _prepare_contexts(args, cfg, graph)
    vocab_path = args.vocab if args.vocab is not None \
        else args.checkpoint[0] + ".vocab"
    vocab = Vocabulary.load(vocab_path)
    models = []
    for path in args.checkpoint:
        model = KdmnModel(cfg.dims(), vocab, mode=cfg.mode, seed=0,
                          init_scale=cfg.init_scale)
        model.load(path)
        models.append(model)
    if len(models) == 1:
        acc = evaluate(models[0], contexts)
    else:
        acc = evaluate_ensemble(models, contexts)
    print(f"accuracy={acc:.12g}")
    return 0


def _cmd_gradcheck(args) -> int:
    errs = gradsuite.run_all(seed=args.seed)
    for name, err in errs.items():
        print(f"{name}={err:.3e}")
    worst = max(errs.values())
    print(f"max={worst:.3e}")
    return 0 if worst < 1e-4 else 1


_DISPATCH = {
    "ingest-kg": _cmd_ingest_kg,
    "retrieve": _cmd_retrieve,
    "generate-qa": _cmd_generate_qa,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (ValueError, OSError, FloatingPointError, GraphLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
