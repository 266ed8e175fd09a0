import math

import numpy as np
import pytest

import kdmn.numcore as nc
from kdmn.memory import EpisodicMemory, format_attention_trace


def make_memory(feature_dim=6, memory_dim=4, attn_dim=3, iterations=2, seed=0):
    store = nc.ParameterStore(seed=seed)
    mem = EpisodicMemory(store, "mem", feature_dim, memory_dim, attn_dim,
                         iterations=iterations)
    return store, mem


def random_inputs(rng, memory_dim, slots):
    bank = nc.constant(rng.normal(size=(slots, memory_dim)))
    query = nc.constant(np.tanh(rng.normal(size=memory_dim)))
    return bank, query


class TestAttention:
    def test_weights_sum_to_one_many_draws(self):
        rng = np.random.default_rng(0)
        _, mem = make_memory()
        for _ in range(100):
            slots = int(rng.integers(1, 8))
            bank, query = random_inputs(rng, 4, slots)
            alpha, _ = mem.attend(bank, query, query)
            assert alpha.values.shape == (slots,)
            assert abs(alpha.values.sum() - 1.0) <= 1e-12
            assert np.all(alpha.values >= 0.0)

    def test_context_in_componentwise_slot_hull(self):
        rng = np.random.default_rng(1)
        _, mem = make_memory()
        for _ in range(50):
            slots = int(rng.integers(1, 8))
            bank, query = random_inputs(rng, 4, slots)
            _, context = mem.attend(bank, query, query)
            lo = bank.values.min(axis=0) - 1e-12
            hi = bank.values.max(axis=0) + 1e-12
            assert np.all(context.values >= lo)
            assert np.all(context.values <= hi)

    def test_single_slot_context_is_the_slot(self):
        rng = np.random.default_rng(2)
        _, mem = make_memory()
        bank, query = random_inputs(rng, 4, 1)
        alpha, context = mem.attend(bank, query, query)
        assert alpha.values[0] == 1.0
        assert np.array_equal(context.values, bank.values[0])

    def test_engineered_scores_give_three_to_one_weights(self):
        # one-dimensional memory; wire the scorer to read the slot value
        # directly so the two slots produce logits [ln 3, 0]
        store, mem = make_memory(feature_dim=1, memory_dim=1, attn_dim=1)
        mem.w_attn.values[...] = [[1.0], [0.0], [0.0]]
        mem.b_attn.values[...] = 0.0
        mem.v_attn.values[...] = [2.0]
        s1 = math.atanh(math.log(3.0) / 2.0)
        bank = nc.constant(np.array([[s1], [0.0]]))
        zero = nc.constant(np.zeros(1))
        alpha, context = mem.attend(bank, zero, zero)
        assert alpha.values == pytest.approx([0.75, 0.25], abs=1e-12)
        assert context.values[0] == pytest.approx(0.75 * s1, abs=1e-12)

    def test_permuting_slots_permutes_weights(self):
        rng = np.random.default_rng(3)
        _, mem = make_memory()
        bank, query = random_inputs(rng, 4, 5)
        perm = [3, 0, 4, 1, 2]
        shuffled = nc.constant(bank.values[perm])
        a1, c1 = mem.attend(bank, query, query)
        a2, c2 = mem.attend(shuffled, query, query)
        assert a2.values == pytest.approx(a1.values[perm], rel=1e-12, abs=1e-15)
        assert c2.values == pytest.approx(c1.values, rel=1e-12, abs=1e-15)


class TestEpisodes:
    def test_query_is_squashed_projection(self):
        rng = np.random.default_rng(4)
        _, mem = make_memory(feature_dim=6, memory_dim=4)
        q = mem.make_query(nc.constant(rng.normal(size=6) * 5))
        assert q.values.shape == (4,)
        assert np.all(np.abs(q.values) <= 1.0)

    def test_run_returns_one_alpha_per_episode(self):
        rng = np.random.default_rng(5)
        _, mem = make_memory(iterations=3)
        bank, query = random_inputs(rng, 4, 4)
        out = mem.run(bank, query)
        assert len(out.alphas) == 3
        assert out.memory.values.shape == (4,)

    def test_iterations_override(self):
        rng = np.random.default_rng(6)
        _, mem = make_memory(iterations=2)
        bank, query = random_inputs(rng, 4, 4)
        assert len(mem.run(bank, query, iterations=5).alphas) == 5

    def test_state_update_is_nonnegative(self):
        rng = np.random.default_rng(7)
        _, mem = make_memory()
        bank, query = random_inputs(rng, 4, 4)
        out = mem.run(bank, query)
        assert np.all(out.memory.values >= 0.0)

    def test_rejects_zero_iterations(self):
        with pytest.raises(ValueError):
            make_memory(iterations=0)
        rng = np.random.default_rng(8)
        _, mem = make_memory()
        bank, query = random_inputs(rng, 4, 4)
        with pytest.raises(ValueError):
            mem.run(bank, query, iterations=0)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        bank_vals = rng.normal(size=(4, 4))
        query_vals = rng.normal(size=4)
        outs = []
        for _ in range(2):
            _, mem = make_memory(seed=11)
            out = mem.run(nc.constant(bank_vals), nc.constant(query_vals))
            outs.append(out.memory.values)
        assert np.array_equal(outs[0], outs[1])

    def test_gradients_reach_attention_parameters(self):
        rng = np.random.default_rng(10)
        store, mem = make_memory()
        bank, query = random_inputs(rng, 4, 4)
        out = mem.run(bank, query)
        nc.backward(nc.tsum(out.memory))
        assert np.any(mem.w_attn.grad)
        assert np.any(mem.w_update.grad)


class TestAttentionTrace:
    def test_format(self):
        alphas = [nc.constant(np.array([0.75, 0.25])),
                  nc.constant(np.array([0.5, 0.5]))]
        text = format_attention_trace(alphas)
        assert text == ("0\t0\t0.75\n0\t1\t0.25\n"
                        "1\t0\t0.5\n1\t1\t0.5\n")

    def test_empty(self):
        assert format_attention_trace([]) == ""
