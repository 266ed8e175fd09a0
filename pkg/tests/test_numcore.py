import math
import os
import subprocess
import sys

import numpy as np
import pytest

import kdmn.numcore as nc
from kdmn.numcore.backend import backend_name, kernels
from kdmn.numcore import kernels_py
from kdmn.numcore.tensor import ShapeMismatch


def leaf(values):
    return nc.Tensor(np.asarray(values, dtype=float), requires_grad=True)


class TestTensorBasics:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            nc.Tensor(np.array([1.0, float("nan")]))

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            nc.Tensor(np.array([float("inf")]))

    def test_scalar_shape_preserved(self):
        t = nc.Tensor(np.float64(2.5))
        assert t.values.shape == ()
        assert t.item() == 2.5

    def test_values_are_float64(self):
        assert nc.Tensor(np.array([1, 2])).values.dtype == np.float64


class TestForwardSemantics:
    def test_matmul_value(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        b = leaf([[5.0, 6.0], [7.0, 8.0]])
        out = nc.matmul(a, b)
        assert np.array_equal(out.values, [[19.0, 22.0], [43.0, 50.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        a = leaf(np.zeros((2, 3)))
        b = leaf(np.zeros((2, 3)))
        with pytest.raises(ShapeMismatch, match=r"2, 3"):
            nc.matmul(a, b)

    def test_add_row_bias_broadcasts(self):
        x = leaf(np.zeros((2, 3)))
        bias = leaf([1.0, 2.0, 3.0])
        out = nc.add(x, bias)
        assert np.array_equal(out.values, [[1, 2, 3], [1, 2, 3]])

    def test_hadamard_identity(self):
        x = leaf([0.3, -2.0, 5.0])
        ones = leaf([1.0, 1.0, 1.0])
        assert np.array_equal(nc.hadamard(ones, x).values, x.values)

    def test_relu_definition(self):
        out = nc.relu(leaf([-1.0, 2.0]))
        assert np.array_equal(out.values, [0.0, 2.0])

    def test_softmax_symmetry(self):
        out = nc.softmax(leaf([0.0, 0.0]))
        assert np.array_equal(out.values, [0.5, 0.5])

    def test_softmax_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=7) * 10
            s = nc.softmax(nc.constant(x)).values
            assert abs(s.sum() - 1.0) <= 1e-12
            shifted = nc.softmax(nc.constant(x + 123.456)).values
            assert shifted == pytest.approx(s, rel=1e-12)

    def test_sigmoid_finite_for_huge_inputs(self):
        out = nc.sigmoid(leaf([-1000.0, 1000.0])).values
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0, abs=1e-12)

    def test_clip_bounds(self):
        out = nc.clip(leaf([-2.0, 0.5, 2.0]), -1.0, 1.0)
        assert np.array_equal(out.values, [-1.0, 0.5, 1.0])

    def test_scale_factor_and_shift(self):
        out = nc.scale(leaf([1.0, 2.0]), -2.0, 1.0)
        assert np.array_equal(out.values, [-1.0, -3.0])

    def test_pick_and_rows(self):
        v = leaf([10.0, 20.0, 30.0])
        assert nc.pick(v, 1).item() == 20.0
        m = leaf([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(nc.rows(m, [1, 0, 1]).values,
                              [[3, 4], [1, 2], [3, 4]])

    def test_concat_axis_semantics(self):
        a = leaf([[1.0], [2.0]])
        b = leaf([[3.0], [4.0]])
        assert nc.concat([a, b], axis=0).values.shape == (4, 1)
        assert nc.concat([a, b], axis=1).values.shape == (2, 2)


class TestBackwardSemantics:
    def test_tanh_derivative_at_half(self):
        x = leaf(0.5)
        y = nc.tanh(x)
        nc.backward(y)
        assert x.grad == pytest.approx(1.0 - math.tanh(0.5) ** 2, rel=1e-12)

    def test_identity_chain(self):
        x = leaf(3.0)
        nc.backward(nc.scale(x, 1.0))
        assert x.grad == pytest.approx(1.0)

    def test_product_rule(self):
        a, b = leaf(2.0), leaf(3.0)
        nc.backward(nc.hadamard(a, b))
        assert a.grad == pytest.approx(3.0)
        assert b.grad == pytest.approx(2.0)

    def test_backward_requires_scalar(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            nc.backward(nc.tanh(x))

    def test_repeated_backward_accumulates(self):
        x = leaf(0.25)
        nc.backward(nc.scale(x, 4.0))
        first = float(x.grad)
        y = nc.scale(x, 4.0)
        nc.backward(y)
        assert float(x.grad) == pytest.approx(2.0 * first)

    def test_shared_leaf_grads_sum(self):
        x = leaf(1.5)
        y = nc.add(nc.scale(x, 2.0), nc.scale(x, 3.0))
        nc.backward(y)
        assert x.grad == pytest.approx(5.0)

    def test_no_grad_disables_recording(self):
        x = leaf(0.5)
        with nc.no_grad():
            y = nc.tanh(x)
        assert y.requires_grad is False
        assert x.grad is None or not np.any(x.grad)


class TestLstmCell:
    def zero_params(self, in_dim, hid):
        wx = nc.constant(np.zeros((in_dim, 4 * hid)))
        wh = nc.constant(np.zeros((hid, 4 * hid)))
        b = nc.constant(np.zeros(4 * hid))
        return wx, wh, b

    def test_all_zero(self):
        wx, wh, b = self.zero_params(3, 2)
        h, c = nc.lstm_cell(nc.constant(np.zeros(3)), nc.constant(np.zeros(2)),
                            nc.constant(np.zeros(2)), wx, wh, b)
        assert np.array_equal(h.values, [0.0, 0.0])
        assert np.array_equal(c.values, [0.0, 0.0])

    def test_zero_params_halve_cell_state(self):
        wx, wh, b = self.zero_params(3, 2)
        v = np.array([0.8, -1.2])
        h, c = nc.lstm_cell(nc.constant(np.zeros(3)), nc.constant(np.zeros(2)),
                            nc.constant(v), wx, wh, b)
        assert c.values == pytest.approx(0.5 * v, rel=1e-12)
        assert h.values == pytest.approx(0.5 * np.tanh(0.5 * v), rel=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        args = [nc.constant(rng.normal(size=s))
                for s in ((2, 3), (2, 4), (2, 4), (3, 16), (4, 16), (16,))]
        h1, c1 = nc.lstm_cell(*args)
        h2, c2 = nc.lstm_cell(*args)
        assert np.array_equal(h1.values, h2.values)
        assert np.array_equal(c1.values, c2.values)

    def test_unused_cell_output_contributes_zero(self):
        rng = np.random.default_rng(6)
        x = leaf(rng.normal(size=(1, 3)))
        h0 = leaf(rng.normal(size=(1, 2)))
        c0 = leaf(rng.normal(size=(1, 2)))
        wx = leaf(rng.normal(size=(3, 8)) * 0.4)
        wh = leaf(rng.normal(size=(2, 8)) * 0.4)
        b = leaf(rng.normal(size=8) * 0.4)
        h, _ = nc.lstm_cell(x, h0, c0, wx, wh, b)
        nc.backward(nc.tsum(h))
        err = nc.grad_check(
            lambda: nc.tsum(nc.lstm_cell(x, h0, c0, wx, wh, b)[0]),
            [x, h0, c0, wx, wh, b])
        assert err < 1e-6


class TestGradCheckContract:
    def test_tanh_error_tiny(self):
        rng = np.random.default_rng(1)
        x = leaf(rng.normal(size=20))
        probe = nc.constant(rng.normal(size=20))
        err = nc.grad_check(lambda: nc.tsum(nc.hadamard(nc.tanh(x), probe)), [x])
        assert err < 1e-7

    def test_linear_nearly_exact(self):
        x = leaf(np.array([1.0, -2.0, 3.0]))
        w = nc.constant(np.array([0.5, 0.25, -1.0]))
        err = nc.grad_check(lambda: nc.tsum(nc.hadamard(x, w)), [x])
        assert err < 1e-9

    def test_epsilon_must_be_positive(self):
        x = leaf(1.0)
        with pytest.raises(ValueError):
            nc.grad_check(lambda: nc.scale(x, 2.0), [x], eps=0.0)


class TestParameterStore:
    def test_seeded_init_reproducible_and_bounded(self):
        s1 = nc.ParameterStore(seed=9)
        s2 = nc.ParameterStore(seed=9)
        a = s1.new("w", (50, 20))
        b = s2.new("w", (50, 20))
        assert np.array_equal(a.values, b.values)
        assert np.max(np.abs(a.values)) <= 0.08

    def test_init_scale(self):
        s = nc.ParameterStore(seed=0, init_scale=0.5)
        w = s.new("w", (100,))
        assert 0.08 < np.max(np.abs(w.values)) <= 0.5

    def test_unique_names(self):
        s = nc.ParameterStore(seed=0)
        s.new("w", (2,))
        with pytest.raises(ValueError):
            s.new("w", (2,))

    def test_sgd_step_and_zero_grads(self):
        s = nc.ParameterStore(seed=0)
        w = s.new("w", (3,))
        before = w.values.copy()
        y = nc.tsum(nc.hadamard(w, nc.constant(np.ones(3))))
        nc.backward(y)
        s.sgd_step(0.1)
        assert w.values == pytest.approx(before - 0.1, rel=1e-12)
        s.zero_grads()
        assert not np.any(w.grad)

    def test_check_finite_names_parameter(self):
        s = nc.ParameterStore(seed=0)
        w = s.new("layer.weight", (2,))
        w.values[0] = float("inf")
        with pytest.raises(FloatingPointError, match="layer.weight"):
            s.check_finite()

    def test_count_values(self):
        s = nc.ParameterStore(seed=0)
        s.new("a", (3, 4))
        s.new_zeros("b", (5,))
        assert s.count_values() == 17


class TestCheckpointFormat:
    def build_store(self):
        s = nc.ParameterStore(seed=4)
        s.new("enc.w", (3, 5))
        s.new_zeros("enc.b", (5,))
        return s

    def test_round_trip_bit_identical(self, tmp_path):
        s = self.build_store()
        path = str(tmp_path / "m.ckpt")
        s.save(path)
        fresh = self.build_store()
        fresh.load(path)
        for (n1, t1), (n2, t2) in zip(s.items(), fresh.items()):
            assert n1 == n2
            assert np.array_equal(t1.values, t2.values)
        # saving again is byte-identical
        path2 = str(tmp_path / "m2.ckpt")
        fresh.save(path2)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_header_is_text_with_magic(self, tmp_path):
        s = self.build_store()
        path = str(tmp_path / "m.ckpt")
        s.save(path)
        with open(path, "rb") as fh:
            assert fh.readline().startswith(b"KDMN-CKPT-1")
            assert fh.readline().strip() == b"2"
            assert fh.readline().split(b"\t")[0] == b"enc.w"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        self.build_store().save(str(path))
        raw = path.read_bytes()
        path.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ValueError):
            self.build_store().load(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        self.build_store().save(str(path))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            self.build_store().load(str(path))

    def test_shape_mismatch_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        self.build_store().save(str(path))
        other = nc.ParameterStore(seed=4)
        other.new("enc.w", (5, 3))
        other.new_zeros("enc.b", (5,))
        with pytest.raises(ValueError):
            other.load(str(path))

    def test_nonfinite_payload_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        s = self.build_store()
        s.save(str(path))
        raw = bytearray(path.read_bytes())
        raw[-8:] = np.array([float("nan")]).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            self.build_store().load(str(path))


class TestBackendParity:
    def test_python_kernels_match_active_backend(self):
        rng = np.random.default_rng(11)
        active = kernels()
        B, H = 20, 32
        gates = rng.normal(size=(B, 4 * H)) * 2.0
        c_prev = rng.normal(size=(B, H))
        out = {}
        for name, mod in (("active", active), ("python", kernels_py)):
            g = np.ascontiguousarray(gates.copy())
            c_new = np.empty((B, H))
            tanh_c = np.empty((B, H))
            h_new = np.empty((B, H))
            mod.lstm_pointwise_forward(g, np.ascontiguousarray(c_prev),
                                       c_new, tanh_c, h_new)
            dgates = np.empty((B, 4 * H))
            dc_prev = np.empty((B, H))
            dh = np.ascontiguousarray(rng.normal(size=(B, H)))
            rng2 = np.random.default_rng(12)
            dh = np.ascontiguousarray(rng2.normal(size=(B, H)))
            dc = np.ascontiguousarray(rng2.normal(size=(B, H)))
            mod.lstm_pointwise_backward(g, np.ascontiguousarray(c_prev),
                                        tanh_c, dh, dc, dgates, dc_prev)
            out[name] = (c_new, tanh_c, h_new, dgates, dc_prev)
        for a, b in zip(out["active"], out["python"]):
            assert a == pytest.approx(b, rel=1e-9, abs=1e-12)

    def test_force_python_env_var(self):
        code = ("import kdmn.numcore.backend as b; print(b.backend_name())")
        env = dict(os.environ, KDMN_FORCE_PY_KERNELS="1")
        res = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert res.stdout.strip() == "python"

    def test_backend_name_valid(self):
        assert backend_name() in ("compiled", "python")
