"""Token vocabulary, pretrained word vectors and sequence encoders.

Facts are treated as subject-verb-object phrases: the 3-token sequence
[head, relation, tail] runs through a two-layer stacked LSTM from zero
initial state, and the slot vector is the concatenation of both layers'
final hidden and cell states [h1; c1; h2; c2], width 4 * hidden (2048 at
the default hidden size 512). Question/answer text uses encoders of the
same shape but returns only the top layer's final hidden state.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .kgstore import Triple

UNK = "<unk>"


class Vocabulary:
    """Token -> index table. Index 0 is the unknown token; real words
    start at 1 in the order given (or file line order)."""

    def __init__(self, words=()):
        self._index = {UNK: 0}
        for w in words:
            if w not in self._index:
                self._index[w] = len(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index.get(word, 0)

    def encode(self, tokens) -> list:
        return [self._index.get(t, 0) for t in tokens]

    def words(self) -> list:
        """All words except the unknown marker, in index order."""
        return [w for w in self._index if w != UNK]

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.words():
                fh.write(w + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def load_embeddings(path: str, vocab: Vocabulary, table: np.ndarray) -> int:
    """Overwrite rows of an embedding table with vectors from a text file.

    File format: one entry per line, the word then its components,
    space-separated. Words absent from the vocabulary are skipped; vocab
    words absent from the file keep their current (random) rows. Returns
    the number of rows written. Raises ValueError on a component-count
    mismatch, naming the word.
    """
    dim = table.shape[1]
    covered = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word = parts[0]
            if word not in vocab:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(
                    f"embedding for {word!r} has {len(parts) - 1} components, "
                    f"expected {dim}")
            table[vocab.index(word)] = [float(v) for v in parts[1:]]
            covered += 1
    return covered


def svo_tokens(triple: Triple) -> list:
    """A fact as a 3-token subject-verb-object phrase."""
    return [triple.head, triple.relation, triple.tail]


class StackedLstmEncoder:
    """Two stacked LSTM layers over embedded token sequences.

    Parameters live in the given store under `<prefix>.l<k>.{wx,wh,b}`.
    """

    def __init__(self, store, prefix: str, embed_dim: int, hidden: int,
                 layers: int = 2):
        self.prefix = prefix
        self.hidden = hidden
        self.layers = layers
        self._p = []
        in_dim = embed_dim
        for k in range(layers):
            wx = store.new(f"{prefix}.l{k}.wx", (in_dim, 4 * hidden))
            wh = store.new(f"{prefix}.l{k}.wh", (hidden, 4 * hidden))
            b = store.new_zeros(f"{prefix}.l{k}.b", (4 * hidden,))
            self._p.append((wx, wh, b))
            in_dim = hidden

    @property
    def slot_dim(self) -> int:
        """Width of a state-concatenation encoding: h and c per layer."""
        return 2 * self.layers * self.hidden

    def run(self, embedding: nc.Tensor, index_rows):
        """Consume a batch of same-length sequences; returns the final
        (h, c) pair per layer. index_rows: (B, T) indices into the
        embedding table."""
        idx = np.asarray(index_rows, dtype=np.intp)
        if idx.ndim != 2 or idx.shape[1] == 0:
            raise ValueError(f"need a (batch, steps) index array, got {idx.shape}")
        batch = idx.shape[0]
        states = []
        for _ in range(self.layers):
            zeros = nc.constant(np.zeros((batch, self.hidden)))
            states.append((zeros, zeros))
        for t in range(idx.shape[1]):
            x = nc.rows(embedding, idx[:, t])
            for k, (wx, wh, b) in enumerate(self._p):
                h, c = nc.lstm_cell(x, states[k][0], states[k][1], wx, wh, b)
                states[k] = (h, c)
                x = h
        return states

    def encode_states(self, embedding: nc.Tensor, index_rows) -> nc.Tensor:
        """(B, T) index rows -> (B, 4*hidden) state concatenations
        [h1; c1; h2; c2]."""
        states = self.run(embedding, index_rows)
        finals = []
        for h, c in states:
            finals.extend((h, c))
        return nc.concat(finals, axis=1)

    def encode_text(self, embedding: nc.Tensor, tokens_idx) -> nc.Tensor:
        """One token index sequence -> the top layer's final hidden state
        as a rank-1 vector of width hidden. Empty input gives zeros."""
        idx = list(tokens_idx)
        if not idx:
            return nc.constant(np.zeros(self.hidden))
        states = self.run(embedding, [idx])
        top_h = states[-1][0]
        return nc.reshape(top_h, (self.hidden,))


def encode_svo(encoder: StackedLstmEncoder, embedding: nc.Tensor,
               vocab: Vocabulary, triple: Triple) -> nc.Tensor:
    """One fact -> one memory slot vector of width 4 * hidden."""
    out = encoder.encode_states(embedding, [vocab.encode(svo_tokens(triple))])
    return nc.reshape(out, (encoder.slot_dim,))


def build_memory_bank(encoder: StackedLstmEncoder, embedding: nc.Tensor,
                      vocab: Vocabulary, triples) -> nc.Tensor:
    """Encode facts into slot rows, one row per fact in the given order;
    all facts encode as one 3-step batch. No facts yields a single
    all-zero slot so downstream attention always has a bank to read."""
    triples = list(triples)
    if not triples:
        return nc.constant(np.zeros((1, encoder.slot_dim)))
    seqs = [vocab.encode(svo_tokens(t)) for t in triples]
    return encoder.encode_states(embedding, seqs)
