"""Template-based multi-choice QA generation over scene annotations.

Each item starts from a scene object that participates in a fact under
one of five relations; the fact's other endpoint fills a question
template, and the scene object is the ground-truth answer. Three
distractors are added: one that satisfies the fact pattern but is absent
from the scene, one present in the scene that fails the pattern, and one
drawn from the ground-truth answers of other items with the same
relation, required not to satisfy both conditions at once. Candidate
order is shuffled per item. Generation is a pure function of
(scenes, graph, seed).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .kgstore import KnowledgeGraph, Triple, normalize_surface

VISUAL_IS_HEAD = "visual-is-head"
VISUAL_IS_TAIL = "visual-is-tail"

MAX_POOL_RETRIES = 100


@dataclass(frozen=True)
class Template:
    relation: str
    direction: str  # which endpoint of the fact is the scene object
    pattern: str    # question text with an {other} placeholder


# one template per (relation, direction); {other} is the non-scene endpoint
BUILTIN_TEMPLATES = (
    Template("UsedFor", VISUAL_IS_HEAD, "what in this image can be used for {other}?"),
    Template("UsedFor", VISUAL_IS_TAIL, "what in this image can {other} be used for?"),
    Template("PartOf", VISUAL_IS_HEAD, "what in this image is a part of {other}?"),
    Template("PartOf", VISUAL_IS_TAIL, "what in this image has {other} as a part?"),
    Template("HasProperty", VISUAL_IS_HEAD, "what in this image has the property of {other}?"),
    Template("HasProperty", VISUAL_IS_TAIL, "what property does the {other} in this image have?"),
    Template("HasA", VISUAL_IS_HEAD, "what in this image has {other}?"),
    Template("HasA", VISUAL_IS_TAIL, "what in this image belongs to {other}?"),
    Template("CapableOf", VISUAL_IS_HEAD, "what in this image is capable of {other}?"),
    Template("CapableOf", VISUAL_IS_TAIL, "what in this image is {other} capable of?"),
)


@dataclass
class SceneAnnotation:
    """Visible entities of one image, with box areas."""

    image_id: str
    entities: list  # (entity id, area)

    def entity_set(self) -> set:
        return {e for e, _ in self.entities}


@dataclass
class DraftQA:
    """A question with its ground truth, before distractors."""

    image_id: str
    question: str
    ground_truth: str
    other: str
    relation: str
    direction: str
    triple: Triple


@dataclass
class GeneratedQA:
    """A finished item. Provenance fields (triple, per-slot distractors)
    stay out of the emitted dataset; the validator reads them."""

    image_id: str
    question: str
    candidates: list       # 4, shuffled
    answer_index: int      # 1-based position of the ground truth
    ground_truth: str
    other: str
    relation: str
    direction: str
    triple: Triple
    confuser_knowledge: str  # satisfies the pattern, absent from scene
    confuser_scene: str      # in the scene, fails the pattern
    confuser_pool: str       # same-relation answer, not both conditions
    objects: list = field(default_factory=list)  # (entity, area)


def satisfies(graph: KnowledgeGraph, entity: str, relation: str,
              direction: str, other: str) -> bool:
    """Does `entity` stand in the template's fact pattern with `other`?"""
    if direction == VISUAL_IS_HEAD:
        return graph.has_triple(entity, relation, other)
    return graph.has_triple(other, relation, entity)


def _eligible_facts(graph: KnowledgeGraph, entity: str, by_relation: dict) -> list:
    """(triple, direction) pairs where entity fills a template's scene slot."""
    out = []
    for t in graph.triples:
        if t.head == entity and (t.relation, VISUAL_IS_HEAD) in by_relation:
            out.append((t, VISUAL_IS_HEAD))
        if t.tail == entity and (t.relation, VISUAL_IS_TAIL) in by_relation:
            out.append((t, VISUAL_IS_TAIL))
    out.sort(key=lambda td: (td[0], td[1]))
    return out


def generate_qa(scene: SceneAnnotation, graph: KnowledgeGraph,
                templates, rng: random.Random) -> DraftQA | None:
    """Draft one question for a scene, or None when no scene entity
    participates in any templated fact."""
    by_relation = {(t.relation, t.direction): t for t in templates}
    eligible = []
    for entity in sorted(scene.entity_set()):
        if entity in graph and _eligible_facts(graph, entity, by_relation):
            eligible.append(entity)
    if not eligible:
        return None
    entity = rng.choice(eligible)
    triple, direction = rng.choice(_eligible_facts(graph, entity, by_relation))
    other = triple.tail if direction == VISUAL_IS_HEAD else triple.head
    template = by_relation[(triple.relation, direction)]
    return DraftQA(
        image_id=scene.image_id,
        question=template.pattern.format(other=other),
        ground_truth=entity,
        other=other,
        relation=triple.relation,
        direction=direction,
        triple=triple,
    )


def sample_confusers(draft: DraftQA, scene: SceneAnnotation,
                     graph: KnowledgeGraph, answer_pool: list,
                     rng: random.Random) -> tuple | None:
    """The three distractors for a draft, or None when infeasible.

    answer_pool: ground-truth answers of other items with the same
    relation (a list; repeats raise sampling odds). Pool sampling rejects
    ineligible entries up to MAX_POOL_RETRIES times.
    """
    scene_set = scene.entity_set()
    gt = draft.ground_truth

    def fits(entity):
        return satisfies(graph, entity, draft.relation, draft.direction, draft.other)

    knowledge_only = [e for e in sorted(graph.entities)
                      if e != gt and fits(e) and e not in scene_set]
    if not knowledge_only:
        return None
    conf_a = rng.choice(knowledge_only)

    scene_only = [e for e in sorted(scene_set)
                  if e != gt and not fits(e)]
    if not scene_only:
        return None
    conf_b = rng.choice(scene_only)

    if not answer_pool:
        return None
    conf_c = None
    for _ in range(MAX_POOL_RETRIES):
        pick = rng.choice(answer_pool)
        if pick in (gt, conf_a, conf_b):
            continue
        if pick in scene_set and fits(pick):
            continue
        conf_c = pick
        break
    if conf_c is None:
        return None
    return conf_a, conf_b, conf_c


def _finish(draft: DraftQA, scene: SceneAnnotation, confusers,
            rng: random.Random) -> GeneratedQA:
    candidates = [draft.ground_truth, *confusers]
    rng.shuffle(candidates)
    return GeneratedQA(
        image_id=draft.image_id,
        question=draft.question,
        candidates=candidates,
        answer_index=candidates.index(draft.ground_truth) + 1,
        ground_truth=draft.ground_truth,
        other=draft.other,
        relation=draft.relation,
        direction=draft.direction,
        triple=draft.triple,
        confuser_knowledge=confusers[0],
        confuser_scene=confusers[1],
        confuser_pool=confusers[2],
        objects=list(scene.entities),
    )


def generate_dataset(scenes, graph: KnowledgeGraph, target_count: int,
                     seed: int, templates=BUILTIN_TEMPLATES) -> list:
    """Generate up to target_count items, one attempt per scene.

    Two passes with the same seed: the first drafts questions to collect
    the per-relation answer pools the distractor sampler needs, the
    second draws the finished items. Returns fewer than target_count only
    when the scenes cannot support it (callers should warn).
    """
    if target_count < 1:
        raise ValueError(f"target_count must be >= 1, got {target_count}")
    scenes = list(scenes)

    pools: dict[str, list] = {}
    draft_rng = random.Random(seed)
    for scene in scenes:
        draft = generate_qa(scene, graph, templates, draft_rng)
        if draft is not None:
            pools.setdefault(draft.relation, []).append(draft.ground_truth)

    items = []
    rng = random.Random(seed)
    for scene in scenes:
        if len(items) >= target_count:
            break
        draft = generate_qa(scene, graph, templates, rng)
        if draft is None:
            continue
        confusers = sample_confusers(draft, scene, graph,
                                     pools.get(draft.relation, []), rng)
        if confusers is None:
            continue
        items.append(_finish(draft, scene, confusers, rng))
    return items


def validate_item(item: GeneratedQA, graph: KnowledgeGraph) -> list:
    """Constraint violations for one item; empty list means valid."""
    problems = []
    scene_set = {e for e, _ in item.objects}

    def fits(entity):
        return satisfies(graph, entity, item.relation, item.direction, item.other)

    if len(set(item.candidates)) != 4:
        problems.append("candidates not distinct")
    if item.candidates[item.answer_index - 1] != item.ground_truth:
        problems.append("answer index does not point at the ground truth")
    if set(item.candidates) != {item.ground_truth, item.confuser_knowledge,
                                item.confuser_scene, item.confuser_pool}:
        problems.append("candidates differ from recorded choices")
    if not (item.ground_truth in scene_set and fits(item.ground_truth)):
        problems.append("ground truth must be in the scene and fit the fact")
    if not (fits(item.confuser_knowledge)
            and item.confuser_knowledge not in scene_set):
        problems.append("knowledge confuser must fit the fact and miss the scene")
    if not (item.confuser_scene in scene_set
            and not fits(item.confuser_scene)):
        problems.append("scene confuser must be in the scene and fail the fact")
    if item.confuser_pool in scene_set and fits(item.confuser_pool):
        problems.append("pool confuser satisfies both conditions")
    patterns = {(t.relation, t.direction): t.pattern for t in BUILTIN_TEMPLATES}
    expected = patterns.get((item.relation, item.direction))
    if expected is None or item.question != expected.format(other=item.other):
        problems.append("question does not match its template")
    return problems


# ---------------------------------------------------------------------------
# files


def load_scenes(path: str) -> list:
    """Scene JSON-lines: {"image_id": ..., "objects": [{"entity", "area"}]}.
    Entity names are normalized on load."""
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: bad JSON: {exc}") from None
            entities = [(normalize_surface(o["entity"]), float(o["area"]))
                        for o in obj["objects"]]
            scenes.append(SceneAnnotation(image_id=obj["image_id"],
                                          entities=entities))
    return scenes


def save_scenes(scenes, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            obj = {"image_id": s.image_id,
                   "objects": [{"entity": e, "area": a} for e, a in s.entities]}
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def dataset_objects(items) -> list:
    """JSON-ready dataset rows (provenance fields omitted)."""
    rows = []
    for k, item in enumerate(items):
        rows.append({
            "id": f"qa{k:05d}",
            "image_id": item.image_id,
            "question": item.question,
            "candidates": list(item.candidates),
            "answer": item.answer_index,
            "objects": [{"entity": e, "area": a} for e, a in item.objects],
        })
    return rows


def presence_features(scenes, entity_order) -> dict:
    """Synthetic image features: one component per entity in entity_order,
    1.0 when the scene shows it."""
    index = {e: i for i, e in enumerate(entity_order)}
    out = {}
    for scene in scenes:
        vec = [0.0] * len(index)
        for e in scene.entity_set():
            if e in index:
                vec[index[e]] = 1.0
        out[scene.image_id] = vec
    return out
