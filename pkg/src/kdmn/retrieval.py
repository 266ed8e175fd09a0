"""Fact retrieval for one scene/question context.

Three steps. First, the mention entities (scene objects by area, question
keywords linked against the graph) select a first-order subgraph: every
fact incident to at least one mention node. Second, mention weights
spread over that subgraph with per-hop decay, scoring each node:

    score(i) = w_i + sum over reachable j != i of decay^hops(i, j) * w_j

with hop counts from undirected breadth-first search capped at max_hops,
edge direction and relation ignored. Third, each fact gets weight
score(head) + score(tail) and the strongest top_n facts are kept.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

from .kgstore import KnowledgeGraph, Triple, link_entities, normalize_surface

DEFAULT_DECAY = 0.5
DEFAULT_MAX_HOPS = 3
DEFAULT_TOP_N = 20

# question-side tokens that never seed retrieval
DEFAULT_STOPWORDS = frozenset("""
a an the this that these those it its is are was were be been being am
do does did can could will would shall should may might must of in on
at to for from by with about as into over under what which who whom
whose where when how why and or not no nor so if then than there here
have has had
""".split())

_WORD_SPLIT = re.compile(r"[^a-z0-9]+")


def extract_keywords(question: str, stopwords=DEFAULT_STOPWORDS) -> list:
    """Lowercase word tokens, split on non-alphanumeric boundaries, with
    stopwords removed. Order preserved, duplicates kept."""
    tokens = [t for t in _WORD_SPLIT.split(question.lower()) if t]
    return [t for t in tokens if t not in stopwords]


@dataclass
class RetrievalConfig:
    """Decay per hop, breadth-first hop cap, and how many facts to keep."""

    decay: float = DEFAULT_DECAY
    max_hops: int = DEFAULT_MAX_HOPS
    top_n: int = DEFAULT_TOP_N

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.max_hops < 1:
            raise ValueError(f"max_hops must be >= 1, got {self.max_hops}")
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")


@dataclass
class ContextQuery:
    """Entity mentions seeding retrieval: visual ones carry raw areas,
    textual ones are weighted equally."""

    visual_mentions: list = field(default_factory=list)   # (entity, area)
    textual_mentions: list = field(default_factory=list)  # entity ids

    def mention_entities(self) -> set:
        ents = {e for e, _ in self.visual_mentions}
        ents.update(self.textual_mentions)
        return ents


def make_context_query(graph: KnowledgeGraph, objects, question: str,
                       stopwords=DEFAULT_STOPWORDS) -> ContextQuery:
    """Link scene objects and question keywords against the graph.

    objects: (name, area) pairs; names are normalized and dropped when
    absent from the graph. Question keywords are greedily matched into
    graph entity ids (multi-word ids match runs of adjacent keywords).
    """
    visual = []
    for name, area in objects:
        ent = normalize_surface(name)
        if ent in graph:
            if area < 0:
                raise ValueError(f"negative area for object {name!r}")
            visual.append((ent, float(area)))
    textual = link_entities(extract_keywords(question, stopwords), graph.adjacency)
    return ContextQuery(visual_mentions=visual, textual_mentions=textual)


@dataclass
class WeightedSubgraph:
    """First-order subgraph: seed weights per node plus the facts whose
    endpoints stay inside it. Mention nodes carry their query weights,
    other endpoints carry 0."""

    weights: dict = field(default_factory=dict)  # entity -> seed weight
    edges: list = field(default_factory=list)    # Triple

    def neighbors(self) -> dict:
        """Undirected adjacency over the subgraph's nodes."""
        adj: dict[str, set] = {node: set() for node in self.weights}
        for t in self.edges:
            adj[t.head].add(t.tail)
            adj[t.tail].add(t.head)
        return adj

    def is_empty(self) -> bool:
        return not self.edges


def init_node_weights(query: ContextQuery, total_visual_mass: float = 1.0) -> dict:
    """Seed weights from a query's mentions.

    Visual areas are rescaled so the visual side sums to total_visual_mass
    (all-zero areas split the mass uniformly); textual mentions share a
    total mass of 1.0 equally. Repeated mentions accumulate.
    """
    weights: dict[str, float] = {}
    if query.visual_mentions:
        total = sum(a for _, a in query.visual_mentions)
        if total == 0.0:
            per = total_visual_mass / len(query.visual_mentions)
            for ent, _ in query.visual_mentions:
                weights[ent] = weights.get(ent, 0.0) + per
        else:
            for ent, area in query.visual_mentions:
                w = total_visual_mass * area / total
                weights[ent] = weights.get(ent, 0.0) + w
    if query.textual_mentions:
        share = 1.0 / len(query.textual_mentions)
        for ent in query.textual_mentions:
            weights[ent] = weights.get(ent, 0.0) + share
    return weights


def build_first_order_subgraph(graph: KnowledgeGraph, query: ContextQuery,
                               total_visual_mass: float = 1.0) -> WeightedSubgraph:
    """Facts incident to at least one mention node, plus seed weights for
    the mention nodes (non-mention endpoints get weight 0)."""
    mention_weights = init_node_weights(query, total_visual_mass)
    candidates = set(mention_weights)
    edges = [t for t in graph.triples
             if t.head in candidates or t.tail in candidates]
    weights: dict[str, float] = {}
    for t in edges:
        weights.setdefault(t.head, 0.0)
        weights.setdefault(t.tail, 0.0)
    for ent in weights:
        if ent in mention_weights:
            weights[ent] = mention_weights[ent]
    return WeightedSubgraph(weights=weights, edges=edges)


def _hop_distances(adj: dict, source: str, max_hops: int) -> dict:
    dist = {source: 0}
    frontier = deque([source])
    while frontier:
        node = frontier.popleft()
        d = dist[node]
        if d == max_hops:
            continue
        for other in sorted(adj[node]):
            if other not in dist:
                dist[other] = d + 1
                frontier.append(other)
    return dist


def propagate_scores(subgraph: WeightedSubgraph,
                     config: RetrievalConfig) -> dict:
    """Score every subgraph node by decay-weighted seed mass within
    max_hops. Seeds spread outward one BFS per nonzero-weight node,
    visited in sorted order so float accumulation is deterministic."""
    scores = {node: subgraph.weights[node] for node in sorted(subgraph.weights)}
    adj = subgraph.neighbors()
    for source in sorted(subgraph.weights):
        w = subgraph.weights[source]
        if w == 0.0:
            continue
        for node, d in _hop_distances(adj, source, config.max_hops).items():
            if d > 0:
                scores[node] += (config.decay ** d) * w
    return scores


def score_edges(subgraph: WeightedSubgraph, scores: dict) -> dict:
    """Fact weight = score(head) + score(tail), for every subgraph fact."""
    return {t: scores[t.head] + scores[t.tail] for t in subgraph.edges}


@dataclass
class RankedKnowledge:
    """Retrieval output: at most top_n facts as (triple, weight), weight
    descending, ties broken by (head, relation, tail)."""

    triples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triples)

    def is_empty(self) -> bool:
        return not self.triples

    def bare_triples(self) -> list:
        return [t for t, _ in self.triples]


def select_top_n(edge_weights: dict, n: int) -> RankedKnowledge:
    """Strongest n facts; fewer facts than n returns them all."""
    if n < 1:
        raise ValueError(f"top-n count must be >= 1, got {n}")
    ranked = sorted(edge_weights.items(), key=lambda tw: (-tw[1], tw[0]))
    return RankedKnowledge(triples=ranked[:n])


def retrieve(graph: KnowledgeGraph, query: ContextQuery,
             config: RetrievalConfig | None = None,
             total_visual_mass: float = 1.0) -> RankedKnowledge:
    """Full pipeline: subgraph, score propagation, fact ranking."""
    cfg = config if config is not None else RetrievalConfig()
    sub = build_first_order_subgraph(graph, query, total_visual_mass)
    if sub.is_empty():
        return RankedKnowledge()
    scores = propagate_scores(sub, cfg)
    return select_top_n(score_edges(sub, scores), cfg.top_n)


def format_ranked(ranked: RankedKnowledge) -> str:
    """Stable TSV: head, relation, tail, weight per line."""
    lines = [f"{t.head}\t{t.relation}\t{t.tail}\t{w:.12g}"
             for t, w in ranked.triples]
    return "\n".join(lines) + ("\n" if lines else "")
