"""Iterative soft-attention reads over the fact slot memory.

A query vector is formed from the fused image/question/answer features.
Starting from the query, each episode scores every memory slot against
the current state, takes the softmax-weighted slot average, and passes it
through a gated update to produce the next state. Attention parameters
are shared across episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numcore as nc


@dataclass
class EpisodicState:
    """Final state plus the per-episode attention weights (one rank-1
    tensor of slot weights per episode, in order)."""

    memory: nc.Tensor
    alphas: list


class EpisodicMemory:
    """Query construction, slot attention and the episode update."""

    def __init__(self, store, prefix: str, feature_dim: int, memory_dim: int,
                 attn_dim: int, iterations: int = 2):
        if iterations < 1:
            raise ValueError(f"need at least one episode, got {iterations}")
        self.memory_dim = memory_dim
        self.iterations = iterations
        self.w_query = store.new(f"{prefix}.w_query", (feature_dim, memory_dim))
        self.b_query = store.new_zeros(f"{prefix}.b_query", (memory_dim,))
        self.w_attn = store.new(f"{prefix}.w_attn", (3 * memory_dim, attn_dim))
        self.b_attn = store.new_zeros(f"{prefix}.b_attn", (attn_dim,))
        self.v_attn = store.new(f"{prefix}.v_attn", (attn_dim,))
        self.w_update = store.new(f"{prefix}.w_update", (3 * memory_dim, memory_dim))
        self.b_update = store.new_zeros(f"{prefix}.b_update", (memory_dim,))

    def make_query(self, features: nc.Tensor) -> nc.Tensor:
        """tanh-squashed projection of the fused features into memory space."""
        return nc.tanh(nc.add(nc.matmul(features, self.w_query), self.b_query))

    def attend(self, bank: nc.Tensor, state: nc.Tensor, query: nc.Tensor):
        """Score each slot against [slot; state; query]; return the softmax
        weights (rank 1, sums to 1) and the weighted slot average."""
        k = bank.values.shape[0]
        z = nc.concat([bank,
                       nc.broadcast_rows(state, k),
                       nc.broadcast_rows(query, k)], axis=1)
        hidden = nc.tanh(nc.add(nc.matmul(z, self.w_attn), self.b_attn))
        alpha = nc.softmax(nc.matmul(hidden, self.v_attn))
        context = nc.matmul(alpha, bank)
        return alpha, context

    def update(self, state: nc.Tensor, context: nc.Tensor,
               query: nc.Tensor) -> nc.Tensor:
        """Next episode state from [state; context; query]."""
        z = nc.concat([state, context, query], axis=0)
        return nc.relu(nc.add(nc.matmul(z, self.w_update), self.b_update))

    def run(self, bank: nc.Tensor, query: nc.Tensor,
            iterations: int | None = None) -> EpisodicState:
        """Run the episode loop starting from the query state."""
        t = self.iterations if iterations is None else iterations
        if t < 1:
            raise ValueError(f"need at least one episode, got {t}")
        state = query
        alphas = []
        for _ in range(t):
            alpha, context = self.attend(bank, state, query)
            alphas.append(alpha)
            state = self.update(state, context, query)
        return EpisodicState(memory=state, alphas=alphas)


def format_attention_trace(alphas) -> str:
    """Attention weights as TSV lines: episode, slot, weight."""
    lines = []
    for ep, alpha in enumerate(alphas):
        for slot, w in enumerate(alpha.values):
            lines.append(f"{ep}\t{slot}\t{w:.12g}")
    return "\n".join(lines) + ("\n" if lines else "")
