"""Independent reference implementations used only by the tests.

The scoring oracle recomputes node scores the direct way: one breadth
first search per node i, then score(i) = w_i + sum over every other node
j within the hop cap of decay^dist(i, j) * w_j. The package implements
the transposed (per-seed) accumulation, so agreement is meaningful.
"""

from __future__ import annotations

from collections import deque


def undirected_adjacency(edges) -> dict:
    adj = {}
    for head, tail in edges:
        adj.setdefault(head, set()).add(tail)
        adj.setdefault(tail, set()).add(head)
    return adj


def bfs_distances(adj: dict, source: str) -> dict:
    """Unbounded hop counts from source (whole component)."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def oracle_scores(weights: dict, edges, decay: float, max_hops: int) -> dict:
    """Receiver-side direct summation over all-pairs BFS distances."""
    adj = undirected_adjacency(edges)
    for node in weights:
        adj.setdefault(node, set())
    scores = {}
    for i in weights:
        total = weights[i]
        dist = bfs_distances(adj, i)
        for j, d in dist.items():
            if j != i and d <= max_hops and j in weights:
                total += (decay ** d) * weights[j]
        scores[i] = total
    return scores


def oracle_edge_weights(scores: dict, triples) -> dict:
    return {t: scores[t.head] + scores[t.tail] for t in triples}


def oracle_top_n(edge_weights: dict, n: int) -> list:
    """Exhaustive sort: weight descending, then (head, relation, tail)."""
    return sorted(edge_weights.items(), key=lambda tw: (-tw[1], tw[0]))[:n]
