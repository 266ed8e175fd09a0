"""Triple store for the commonsense graph.

Facts are (head, relation, tail) strings. Files are one fact per line,
head/relation/tail separated by tabs. Heads and tails are normalized to
lowercase underscore-joined surface forms; relations are kept verbatim.
The graph is undirected for connectivity purposes: retrieval and degree
bookkeeping ignore edge direction.
"""

from __future__ import annotations

import re
from typing import Iterable, NamedTuple


class Triple(NamedTuple):
    head: str
    relation: str
    tail: str


class GraphLoadError(ValueError):
    """A malformed line in a graph file; the message names the line number."""


_PUNCT = re.compile(r"[^\w\s]", flags=re.ASCII)
_WS = re.compile(r"\s+")


def normalize_surface(text: str) -> str:
    """Canonical entity id: lowercase, punctuation stripped, spaces -> _.

    Idempotent: normalize_surface(normalize_surface(s)) == normalize_surface(s).
    """
    cleaned = _PUNCT.sub(" ", text.lower())
    return _WS.sub("_", cleaned.strip())


def link_entities(tokens: list[str], lexicon, max_parts: int | None = None) -> list[str]:
    """Greedy longest-match of token runs against an entity lexicon.

    Scans left to right; at each position tries the longest window (joined
    with underscores) first. Matches may repeat; unmatched tokens are
    dropped. Returns matched entity ids in text order.
    """
    if max_parts is None:
        max_parts = max((e.count("_") + 1 for e in lexicon), default=1)
    found = []
    i = 0
    n = len(tokens)
    while i < n:
        for width in range(min(max_parts, n - i), 0, -1):
            candidate = "_".join(tokens[i:i + width])
            if candidate in lexicon:
                found.append(candidate)
                i += width
                break
        else:
            i += 1
    return found


class KnowledgeGraph:
    """Deduplicated triples plus an undirected adjacency index."""

    def __init__(self):
        self.triples: list[Triple] = []
        self._seen: set[Triple] = set()
        self.adjacency: dict[str, list[str]] = {}
        self._max_parts = 1

    def add(self, head: str, relation: str, tail: str) -> bool:
        """Add one fact; surfaces are normalized. Returns False on duplicate."""
        t = Triple(normalize_surface(head), relation, normalize_surface(tail))
        if not t.head or not t.tail or not t.relation:
            raise ValueError(f"empty field in triple {t!r}")
        if t in self._seen:
            return False
        self._seen.add(t)
        self.triples.append(t)
        # both directions; a self-loop lands twice so degree sums stay 2|T|
        self.adjacency.setdefault(t.head, []).append(t.tail)
        self.adjacency.setdefault(t.tail, []).append(t.head)
        for e in (t.head, t.tail):
            self._max_parts = max(self._max_parts, e.count("_") + 1)
        return True

    @property
    def entities(self) -> set:
        return set(self.adjacency)

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, entity: str) -> bool:
        return entity in self.adjacency

    def has_triple(self, head: str, relation: str, tail: str) -> bool:
        return Triple(head, relation, tail) in self._seen

    def neighbors(self, entity: str) -> list[str]:
        """Distinct neighbor ids, sorted. Unknown entity -> empty list."""
        return sorted(set(self.adjacency.get(entity, ())))

    def degree(self, entity: str) -> int:
        return len(self.adjacency.get(entity, ()))

    def link(self, tokens: list[str]) -> list[str]:
        """Entity mentions in a token list (greedy longest match)."""
        return link_entities(tokens, self.adjacency, self._max_parts)

    def triples_among(self, nodes: Iterable[str]) -> list[Triple]:
        """Facts whose head and tail both fall in the node set."""
        keep = set(nodes)
        return [t for t in self.triples if t.head in keep and t.tail in keep]


def load_graph(path: str) -> KnowledgeGraph:
    """Read a tab-separated triple file; blank lines are skipped.

    Raises GraphLoadError naming the 1-based line number on any line that
    does not have exactly three nonempty tab-separated fields.
    """
    graph = KnowledgeGraph()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise GraphLoadError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, "
                    f"got {len(fields)}")
            head, relation, tail = fields
            if not head.strip() or not relation.strip() or not tail.strip():
                raise GraphLoadError(f"{path}: line {lineno}: empty field")
            graph.add(head, relation, tail)
    return graph


def save_graph(graph: KnowledgeGraph, path: str):
    """Write facts sorted by (head, relation, tail); loading the file back
    yields an equivalent graph and re-saving is byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in sorted(graph.triples):
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")
