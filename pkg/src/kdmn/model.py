"""Answer scoring over fused modalities, training and evaluation.

Each image/question/answer feature is projected into a common space with
a tanh layer; the three embeddings are fused by elementwise product. In
the knowledge-using modes the fused features also drive an episodic read
over the fact memory, and the classifier scores [fusion; memory state];
the knowledge-free ablation scores the fusion alone. Every candidate
answer yields an (incorrect, correct) softmax and the predicted answer is
the candidate with the highest "correct" probability, ties to the lowest
index.

Modes: "full" (iterative memory), "nomem" (single attention pass),
"nokg" (no knowledge, no memory or attention parameters).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .encoders import StackedLstmEncoder, Vocabulary, build_memory_bank
from .kgstore import KnowledgeGraph, normalize_surface
from .memory import EpisodicMemory
from .retrieval import (RankedKnowledge, RetrievalConfig, extract_keywords,
                        make_context_query, retrieve)

MODES = ("full", "nomem", "nokg")

N_CANDIDATES = 4
PROB_EPS = 1e-12


@dataclass
class ModelDims:
    """Layer widths. Defaults are the full-scale values; tests shrink them."""

    image_dim: int = 2048
    embed_dim: int = 300
    hidden: int = 512
    common: int = 1024
    attention: int = 512
    episodes: int = 2

    def __post_init__(self):
        for name in ("image_dim", "embed_dim", "hidden", "common",
                     "attention", "episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def memory_dim(self) -> int:
        # slot = [h1; c1; h2; c2] of the fact encoder
        return 4 * self.hidden

    @property
    def query_feature_dim(self) -> int:
        # [f_I; f_Q; f_A]
        return self.image_dim + 2 * self.hidden


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 500
    epochs: int = 10
    seed: int = 0
    # stop once the running train accuracy confirms at/above this value
    stop_at_train_accuracy: float | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class QAContext:
    """One multi-choice item: features, tokens, label and attached facts."""

    item_id: str
    image_id: str
    features: np.ndarray
    question: str
    question_tokens: list
    candidates: list            # exactly 4 token lists
    label: int | None = None    # 1-based answer index
    objects: list = field(default_factory=list)  # (entity, area)
    knowledge: RankedKnowledge | None = None

    def __post_init__(self):
        if len(self.candidates) != N_CANDIDATES:
            raise ValueError(
                f"need exactly {N_CANDIDATES} candidates, got {len(self.candidates)}")
        if self.label is not None and not 1 <= self.label <= N_CANDIDATES:
            raise ValueError(f"label must be in 1..{N_CANDIDATES}, got {self.label}")


@dataclass
class Prediction:
    probabilities: list         # one "correct" probability per candidate
    answer_index: int           # 1-based, argmax with lowest-index tie-break


@dataclass
class TrainResult:
    epoch_losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    train_accuracies: list = field(default_factory=list)
    stopped_epoch: int | None = None


def tokenize_question(text: str) -> list:
    """All lowercase word tokens of a question (stopwords kept)."""
    return extract_keywords(text, stopwords=frozenset())


def tokenize_candidate(text: str) -> list:
    """A candidate answer as a single entity-form token."""
    return [normalize_surface(text)]


# ---------------------------------------------------------------------------
# building blocks (also unit-tested directly)


def embed_modality(f: nc.Tensor, w: nc.Tensor, b: nc.Tensor) -> nc.Tensor:
    """Project one modality feature into the common space: tanh(f W + b)."""
    return nc.tanh(nc.add(nc.matmul(f, w), b))


def fuse(e_i: nc.Tensor, e_q: nc.Tensor, e_a: nc.Tensor) -> nc.Tensor:
    """Elementwise product of the three common-space embeddings."""
    return nc.hadamard(nc.hadamard(e_i, e_q), e_a)


def score_candidate(z: nc.Tensor, w4: nc.Tensor, b4: nc.Tensor) -> nc.Tensor:
    """(incorrect, correct) softmax over the classifier input; returns the
    scalar probability of the "correct" class."""
    logits = nc.add(nc.matmul(z, w4), b4)
    return nc.pick(nc.softmax(logits), 1)


def binary_cross_entropy(y_hat: nc.Tensor, y: int) -> nc.Tensor:
    """-(y log p + (1-y) log(1-p)) with p clamped into [eps, 1-eps]."""
    p = nc.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    if y == 1:
        return nc.scale(nc.log(p), -1.0)
    return nc.scale(nc.log(nc.scale(p, -1.0, 1.0)), -1.0)


class KdmnModel:
    """The scoring network. Parameter layout depends on the mode: the
    knowledge-free ablation carries no fact encoder, no memory and no
    attention parameters, and its classifier reads the fusion vector
    alone."""

    def __init__(self, dims: ModelDims, vocab: Vocabulary, mode: str = "full",
                 seed: int = 0, init_scale: float = 0.08):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.dims = dims
        self.vocab = vocab
        self.mode = mode
        self.episodes = 1 if mode == "nomem" else dims.episodes
        p = nc.ParameterStore(seed=seed, init_scale=init_scale)
        self.params = p
        self.embedding = p.new("embedding", (len(vocab), dims.embed_dim))
        if mode != "nokg":
            self.kg_encoder = StackedLstmEncoder(p, "kg", dims.embed_dim, dims.hidden)
            self.memory = EpisodicMemory(
                p, "mem", dims.query_feature_dim, dims.memory_dim,
                dims.attention, self.episodes)
        else:
            self.kg_encoder = None
            self.memory = None
        self.q_encoder = StackedLstmEncoder(p, "question", dims.embed_dim, dims.hidden)
        self.a_encoder = StackedLstmEncoder(p, "answer", dims.embed_dim, dims.hidden)
        self.w_img = p.new("fuse.w_img", (dims.image_dim, dims.common))
        self.b_img = p.new_zeros("fuse.b_img", (dims.common,))
        self.w_q = p.new("fuse.w_q", (dims.hidden, dims.common))
        self.b_q = p.new_zeros("fuse.b_q", (dims.common,))
        self.w_a = p.new("fuse.w_a", (dims.hidden, dims.common))
        self.b_a = p.new_zeros("fuse.b_a", (dims.common,))
        cls_in = dims.common if mode == "nokg" else dims.common + dims.memory_dim
        self.w_cls = p.new("cls.w", (cls_in, 2))
        self.b_cls = p.new_zeros("cls.b", (2,))

    # -- forward ----------------------------------------------------------

    def candidate_probabilities(self, ctx: QAContext) -> list:
        """The 4 scalar "correct"-probability tensors for one context.

        Image, question and fact-bank work is shared across candidates;
        only the answer-side paths differ.
        """
        if self.mode != "nokg" and ctx.knowledge is None:
            raise ValueError(
                f"context {ctx.item_id!r} has no attached knowledge; "
                f"mode {self.mode!r} requires retrieval first")
        f_img = nc.constant(ctx.features)
        e_img = embed_modality(f_img, self.w_img, self.b_img)
        f_q = self.q_encoder.encode_text(
            self.embedding, self.vocab.encode(ctx.question_tokens))
        e_q = embed_modality(f_q, self.w_q, self.b_q)
        bank = None
        if self.mode != "nokg":
            bank = build_memory_bank(self.kg_encoder, self.embedding,
                                     self.vocab, ctx.knowledge.bare_triples())
        probs = []
        for cand in ctx.candidates:
            f_a = self.a_encoder.encode_text(self.embedding, self.vocab.encode(cand))
            e_a = embed_modality(f_a, self.w_a, self.b_a)
            h = fuse(e_img, e_q, e_a)
            if self.mode == "nokg":
                z = h
            else:
                query = self.memory.make_query(nc.concat([f_img, f_q, f_a], axis=0))
                state = self.memory.run(bank, query, self.episodes)
                z = nc.concat([h, state.memory], axis=0)
            probs.append(score_candidate(z, self.w_cls, self.b_cls))
        return probs

    def predict(self, ctx: QAContext) -> Prediction:
        with nc.no_grad():
            probs = [p.item() for p in self.candidate_probabilities(ctx)]
        return Prediction(probabilities=probs,
                          answer_index=int(np.argmax(probs)) + 1)

    # -- persistence --------------------------------------------------------

    def save(self, path: str):
        self.params.save(path)

    def load(self, path: str):
        self.params.load(path)


def predict(model: KdmnModel, ctx: QAContext) -> Prediction:
    return model.predict(ctx)


def train(model: KdmnModel, contexts, config: TrainConfig) -> TrainResult:
    """Plain SGD over candidate-level binary instances.

    Every context contributes 4 instances per epoch (one per candidate,
    label 1 for the ground-truth index). Batches hold config.batch_size
    contexts; the batch loss is the mean over its 4 * contexts instances.
    Shuffling is seeded. Non-finite losses or parameters abort.
    """
    contexts = list(contexts)
    if not contexts:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    result = TrainResult()
    for epoch in range(config.epochs):
        order = rng.permutation(len(contexts))
        epoch_loss_sum = 0.0
        n_batches = 0
        hits = 0
        for start in range(0, len(order), config.batch_size):
            batch = [contexts[i] for i in order[start:start + config.batch_size]]
            losses = []
            for ctx in batch:
                probs = model.candidate_probabilities(ctx)
                values = [p.values for p in probs]
                if ctx.label == int(np.argmax(values)) + 1:
                    hits += 1
                for k, p in enumerate(probs):
                    losses.append(binary_cross_entropy(p, 1 if k + 1 == ctx.label else 0))
            total = losses[0]
            for extra in losses[1:]:
                total = nc.add(total, extra)
            loss = nc.scale(total, 1.0 / len(losses))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise FloatingPointError(
                    f"training diverged: non-finite loss in epoch {epoch}, "
                    f"batch {n_batches}")
            model.params.zero_grads()
            nc.backward(loss)
            model.params.sgd_step(config.lr)
            model.params.check_finite()
            result.batch_losses.append(loss_value)
            epoch_loss_sum += loss_value
            n_batches += 1
        result.epoch_losses.append(epoch_loss_sum / n_batches)
        acc = hits / len(contexts)
        result.train_accuracies.append(acc)
        if (config.stop_at_train_accuracy is not None
                and acc >= config.stop_at_train_accuracy
                and evaluate(model, contexts) >= config.stop_at_train_accuracy):
            result.stopped_epoch = epoch
            break
    return result


def evaluate(model: KdmnModel, contexts) -> float:
    """Fraction of contexts whose predicted index matches the label."""
    contexts = list(contexts)
    if not contexts:
        raise ValueError("cannot evaluate an empty dataset")
    hits = 0
    for ctx in contexts:
        if ctx.label is None:
            raise ValueError(f"context {ctx.item_id!r} has no label")
        if model.predict(ctx).answer_index == ctx.label:
            hits += 1
    return hits / len(contexts)


def ensemble_predict(models, ctx: QAContext) -> Prediction:
    """Average the per-candidate probabilities of several models."""
    models = list(models)
    if not models:
        raise ValueError("ensemble needs at least one model")
    stacked = np.array([m.predict(ctx).probabilities for m in models])
    avg = stacked.mean(axis=0)
    return Prediction(probabilities=list(avg),
                      answer_index=int(np.argmax(avg)) + 1)


def evaluate_ensemble(models, contexts) -> float:
    contexts = list(contexts)
    if not contexts:
        raise ValueError("cannot evaluate an empty dataset")
    hits = sum(1 for ctx in contexts
               if ensemble_predict(models, ctx).answer_index == ctx.label)
    return hits / len(contexts)


# ---------------------------------------------------------------------------
# dataset plumbing


def attach_knowledge(contexts, graph: KnowledgeGraph,
                     config: RetrievalConfig | None = None,
                     visual_mass: float = 1.0):
    """Run retrieval for every context and store the result on it."""
    cfg = config if config is not None else RetrievalConfig()
    for ctx in contexts:
        query = make_context_query(graph, ctx.objects, ctx.question)
        ctx.knowledge = retrieve(graph, query, cfg, visual_mass)


def build_vocabulary(contexts, graph: KnowledgeGraph | None = None) -> Vocabulary:
    """Sorted vocabulary over question tokens, candidate tokens and (when
    a graph is given) entity ids and relation names."""
    words = set()
    for ctx in contexts:
        words.update(ctx.question_tokens)
        for cand in ctx.candidates:
            words.update(cand)
    if graph is not None:
        for t in graph.triples:
            words.update((t.head, t.relation, t.tail))
    return Vocabulary(sorted(words))


def save_features(features: dict, path: str):
    """Feature file: one line per image id, id then the components,
    space-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(features):
            vec = " ".join(f"{v:.12g}" for v in features[image_id])
            fh.write(f"{image_id} {vec}\n")


def load_features(path: str) -> dict:
    features = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            features[parts[0]] = np.array([float(v) for v in parts[1:]])
    return features


def save_dataset(items, path: str):
    """JSON-lines, keys sorted, one object per context; deterministic."""
    with open(path, "w", encoding="utf-8") as fh:
        for obj in items:
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_dataset(path: str, features: dict | None = None,
                 feature_path: str | None = None) -> list:
    """Read contexts from a JSON-lines dataset.

    Features come from (in priority order) the `features` mapping, the
    `feature_path` file, or each item's own "feature_file" reference
    resolved relative to the dataset.
    """
    if features is None and feature_path is not None:
        features = load_features(feature_path)
    cache = {} if features is None else None
    base = os.path.dirname(os.path.abspath(path))
    contexts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: bad JSON: {exc}") from None
            if features is not None:
                table = features
            else:
                ref = obj.get("feature_file")
                if ref is None:
                    raise ValueError(
                        f"{path}: line {lineno}: no feature source: pass one "
                        f"or add a feature_file field")
                ref = os.path.join(base, ref)
                if ref not in cache:
                    cache[ref] = load_features(ref)
                table = cache[ref]
            try:
                image_id = obj["image_id"]
                if image_id not in table:
                    raise ValueError(f"no features for image {image_id!r}")
                contexts.append(QAContext(
                    item_id=str(obj.get("id", lineno)),
                    image_id=image_id,
                    features=table[image_id],
                    question=obj["question"],
                    question_tokens=tokenize_question(obj["question"]),
                    candidates=[tokenize_candidate(c) for c in obj["candidates"]],
                    label=obj.get("answer"),
                    objects=[(o["entity"], float(o["area"]))
                             for o in obj.get("objects", [])],
                ))
            except KeyError as exc:
                raise ValueError(
                    f"{path}: line {lineno}: missing field {exc.args[0]!r}") from None
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return contexts
