"""Dense float64 tensors with reverse-mode differentiation.

Every learnable computation in the package is expressed through the
primitives below. Each primitive records a graph node while gradients are
enabled; `backward` walks the recorded graph once in reverse topological
order and accumulates gradients into leaf tensors created with
``requires_grad=True``. The graph is rebuilt on every forward pass and
dropped with the output tensors.

Rank 0, 1 and 2 tensors are supported; that is all the model needs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import backend


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


def _shape_error(op: str, a, b) -> ShapeMismatch:
    return ShapeMismatch(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class _Node:
    """One recorded operation: parents, outputs and a backward rule."""

    __slots__ = ("parents", "outputs", "run")

    def __init__(self, parents, outputs, run):
        self.parents = parents
        self.outputs = outputs
        self.run = run


class Tensor:
    """A float64 array (rank <= 2) that can participate in the graph."""

    __slots__ = ("values", "grad", "requires_grad", "_node")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote rank 0 to rank 1
            arr = np.ascontiguousarray(arr)
        if arr.ndim > 2:
            raise ValueError(f"rank {arr.ndim} tensor not supported (max 2)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite (no NaN/Inf)")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(values, requires_grad=False)


def _tracked(*tensors) -> bool:
    if not _grad_enabled:
        return False
    return any(t.requires_grad or t._node is not None for t in tensors)


def _result(values, parents, run) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out.grad = None
    out._node = None
    if run is not None:
        out._node = _Node(parents, (out,), run)
    return out


def _result_pair(values_a, values_b, parents, run):
    a = _result(values_a, (), None)
    b = _result(values_b, (), None)
    node = _Node(parents, (a, b), run)
    a._node = node
    b._node = node
    return a, b


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product with numpy semantics for rank 1 and 2."""
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0:
        raise _shape_error("matmul", av.shape, bv.shape)
    if av.shape[-1] != bv.shape[0]:
        raise _shape_error("matmul", av.shape, bv.shape)
    out = av @ bv
    if not _tracked(a, b):
        return _result(out, (), None)

    def run(gs):
        g = gs[0]
        if av.ndim == 1 and bv.ndim == 1:
            return [g * bv, g * av]
        if av.ndim == 1:  # (n,) @ (n,p) -> (p,)
            return [bv @ g, np.outer(av, g)]
        if bv.ndim == 1:  # (m,n) @ (n,) -> (m,)
            return [np.outer(g, bv), av.T @ g]
        return [g @ bv.T, av.T @ g]

    return _result(out, (a, b), run)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a rank-1 bias may be broadcast over matrix rows."""
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        broadcast = False
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        broadcast = True
    else:
        raise _shape_error("add", av.shape, bv.shape)
    out = av + bv
    if not _tracked(a, b):
        return _result(out, (), None)

    def run(gs):
        g = gs[0]
        return [g, g.sum(axis=0) if broadcast else g]

    return _result(out, (a, b), run)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise _shape_error("hadamard", av.shape, bv.shape)
    out = av * bv
    if not _tracked(a, b):
        return _result(out, (), None)

    def run(gs):
        g = gs[0]
        return [g * bv, g * av]

    return _result(out, (a, b), run)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate rank-1 tensors (axis 0) or rank-2 tensors (axis 0/1)."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of no tensors")
    vals = [t.values for t in tensors]
    ndim = vals[0].ndim
    bad = next((v for v in vals if v.ndim != ndim), None)
    if bad is not None or ndim == 0:
        raise _shape_error("concat", vals[0].shape,
                           bad.shape if bad is not None else ())
    out = np.concatenate(vals, axis=axis)
    if not _tracked(*tensors):
        return _result(out, (), None)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def run(gs):
        g = gs[0]
        if axis == 0:
            return [g[offsets[i]:offsets[i + 1]] for i in range(len(sizes))]
        return [g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes))]

    return _result(out, tuple(tensors), run)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        return [gs[0] * (1.0 - out * out)]

    return _result(out, (a,), run)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.values, 0.0)
    if not _tracked(a):
        return _result(out, (), None)
    mask = a.values > 0.0

    def run(gs):
        return [gs[0] * mask]

    return _result(out, (a,), run)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large negative inputs
    out = 0.5 * (np.tanh(0.5 * a.values) + 1.0)
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        return [gs[0] * out * (1.0 - out)]

    return _result(out, (a,), run)


def softmax(a: Tensor) -> Tensor:
    """Softmax of a rank-1 tensor; output is nonnegative and sums to 1."""
    av = a.values
    if av.ndim != 1:
        raise _shape_error("softmax expects a vector, got", av.shape, ())
    shifted = av - av.max()
    e = np.exp(shifted)
    out = e / e.sum()
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        g = gs[0]
        return [out * (g - np.dot(g, out))]

    return _result(out, (a,), run)


def log(a: Tensor) -> Tensor:
    out = np.log(a.values)
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        return [gs[0] / a.values]

    return _result(out, (a,), run)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where clamped."""
    out = np.clip(a.values, lo, hi)
    if not _tracked(a):
        return _result(out, (), None)
    mask = (a.values > lo) & (a.values < hi)

    def run(gs):
        return [gs[0] * mask]

    return _result(out, (a,), run)


def scale(a: Tensor, factor: float, shift: float = 0.0) -> Tensor:
    """factor * a + shift with python scalars."""
    out = factor * a.values + shift
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        return [gs[0] * factor]

    return _result(out, (a,), run)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a rank-0 tensor."""
    out = np.asarray(a.values.sum())
    if not _tracked(a):
        return _result(out, (), None)
    shape = a.values.shape

    def run(gs):
        return [np.broadcast_to(gs[0], shape).copy() if shape else np.asarray(gs[0])]

    return _result(out, (a,), run)


def mean(a: Tensor) -> Tensor:
    n = a.values.size
    if n == 0:
        raise ValueError("mean of empty tensor")
    return scale(tsum(a), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.values.reshape(shape)
    if not _tracked(a):
        return _result(np.ascontiguousarray(out), (), None)
    old = a.values.shape

    def run(gs):
        return [gs[0].reshape(old)]

    return _result(np.ascontiguousarray(out), (a,), run)


def pick(a: Tensor, index: int) -> Tensor:
    """Select one component of a rank-1 tensor as a rank-0 tensor."""
    av = a.values
    if av.ndim != 1:
        raise _shape_error("pick expects a vector, got", av.shape, ())
    out = np.asarray(av[index])
    if not _tracked(a):
        return _result(out, (), None)

    def run(gs):
        g = np.zeros_like(av)
        g[index] = gs[0]
        return [g]

    return _result(out, (a,), run)


def rows(matrix: Tensor, indices) -> Tensor:
    """Gather rows of a matrix; backward scatter-adds into the matrix."""
    idx = np.asarray(indices, dtype=np.intp)
    if matrix.values.ndim != 2 or idx.ndim != 1:
        raise _shape_error("rows", matrix.values.shape, idx.shape)
    out = matrix.values[idx]
    if not _tracked(matrix):
        return _result(out, (), None)
    mshape = matrix.values.shape

    def run(gs):
        g = np.zeros(mshape)
        np.add.at(g, idx, gs[0])
        return [g]

    return _result(out, (matrix,), run)


def broadcast_rows(vec: Tensor, n: int) -> Tensor:
    """Tile a rank-1 tensor into an (n, d) matrix; backward sums the rows."""
    v = vec.values
    if v.ndim != 1:
        raise _shape_error("broadcast_rows expects a vector, got", v.shape, ())
    out = np.broadcast_to(v, (n, v.shape[0])).copy()
    if not _tracked(vec):
        return _result(out, (), None)

    def run(gs):
        return [gs[0].sum(axis=0)]

    return _result(out, (vec,), run)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_x: Tensor, w_h: Tensor, bias: Tensor):
    """One LSTM cell step.

    Gate order in the packed weight matrices is [input, forget, cell, output]:
    i, f, o = sigmoid(affine), g = tanh(affine), c = f*c_prev + i*g,
    h = o*tanh(c). Accepts a single step (rank-1 x/h/c) or a batch of
    independent sequences stacked as rows (rank-2). The pointwise gate math
    runs through the compiled kernel when available.
    """
    single = x.values.ndim == 1
    xv = x.values.reshape(1, -1) if single else x.values
    hv = h_prev.values.reshape(1, -1) if single else h_prev.values
    cv = c_prev.values.reshape(1, -1) if single else c_prev.values
    n_in, four_h = w_x.values.shape if w_x.values.ndim == 2 else (0, 0)
    hidden = four_h // 4 if four_h else 0
    if (xv.ndim != 2 or hv.shape != (xv.shape[0], hidden)
            or cv.shape != hv.shape or xv.shape[1] != n_in
            or four_h != 4 * hidden or w_h.values.shape != (hidden, four_h)
            or bias.values.shape != (four_h,)):
        raise _shape_error(
            "lstm_cell", (xv.shape, hv.shape, cv.shape),
            (w_x.values.shape, w_h.values.shape, bias.values.shape))

    kern = backend.kernels()
    gates = xv @ w_x.values + hv @ w_h.values + bias.values
    c_new = np.empty_like(cv)
    tanh_c = np.empty_like(cv)
    h_new = np.empty_like(cv)
    kern.lstm_pointwise_forward(gates, cv, c_new, tanh_c, h_new)
    # gates now holds post-activation [i, f, g, o]

    h_out_vals = h_new[0] if single else h_new
    c_out_vals = c_new[0] if single else c_new
    if not _tracked(x, h_prev, c_prev, w_x, w_h, bias):
        h_t = _result(np.ascontiguousarray(h_out_vals), (), None)
        c_t = _result(np.ascontiguousarray(c_out_vals), (), None)
        return h_t, c_t

    def run(gs):
        dh = gs[0] if gs[0] is not None else np.zeros_like(h_new)
        dc = gs[1] if gs[1] is not None else np.zeros_like(c_new)
        if single:
            dh = dh.reshape(1, -1)
            dc = dc.reshape(1, -1)
        # upstream grads may be views (e.g. concat backward column slices);
        # the compiled kernel wants C-contiguous buffers
        dh = np.ascontiguousarray(dh)
        dc = np.ascontiguousarray(dc)
        dgates = np.empty_like(gates)
        dc_prev = np.empty_like(cv)
        kern.lstm_pointwise_backward(gates, cv, tanh_c, dh, dc, dgates, dc_prev)
        dx = dgates @ w_x.values.T
        dh_prev = dgates @ w_h.values.T
        dw_x = xv.T @ dgates
        dw_h = hv.T @ dgates
        db = dgates.sum(axis=0)
        if single:
            dx = dx[0]
            dh_prev = dh_prev[0]
            dc_prev = dc_prev[0]
        return [dx, dh_prev, dc_prev, dw_x, dw_h, db]

    return _result_pair(np.ascontiguousarray(h_out_vals),
                        np.ascontiguousarray(c_out_vals),
                        (x, h_prev, c_prev, w_x, w_h, bias), run)


# ---------------------------------------------------------------------------
# reverse pass


def backward(out: Tensor):
    """Accumulate d(out)/d(leaf) into every reachable requires_grad leaf.

    `out` must be rank 0. Gradients add onto whatever is already stored in
    `.grad`, so zero the leaves between independent passes. Calling this
    twice on the same live graph accumulates twice.
    """
    if out.values.ndim != 0:
        raise ValueError(f"backward needs a scalar output, got shape {out.shape}")

    # iterative post-order over tensors, parents before children
    topo: list[Tensor] = []
    seen = set()
    reached: dict[int, int] = {}  # node id -> outputs of it reached
    stack = [(out, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._node is not None:
            node = t._node
            reached[id(node)] = reached.get(id(node), 0) + 1
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.values)}
    remaining = dict(reached)
    done_nodes = set()
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        node = t._node
        if node is None:
            if t.requires_grad and g is not None:
                t.grad += g
            continue
        remaining[id(node)] -= 1
        if g is not None:
            # stash on the tensor slot of its node output list via dict
            grads[id(t)] = g
        if remaining[id(node)] > 0 or id(node) in done_nodes:
            continue
        done_nodes.add(id(node))
        out_grads = []
        for o in node.outputs:
            og = grads.pop(id(o), None)
            if og is None and o is t and g is not None:
                og = g
            out_grads.append(og)
        # single-output nodes expect a concrete array
        if len(node.outputs) == 1 and out_grads[0] is None:
            continue
        parent_grads = node.run(out_grads)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if not (p.requires_grad or p._node is not None):
                continue
            if id(p) in grads:
                grads[id(p)] += pg
            else:
                grads[id(p)] = pg
