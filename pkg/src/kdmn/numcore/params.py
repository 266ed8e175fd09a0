"""Named parameter collections, SGD updates and checkpoint files."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

_MAGIC = "KDMN-CKPT-1"


class ParameterStore:
    """Ordered mapping of name -> trainable Tensor.

    Creation order is the canonical order: updates, serialization and the
    gradient-check sweep all iterate in it.
    """

    def __init__(self, seed: int = 0, init_scale: float = 0.08):
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self.init_scale = init_scale

    def new(self, name: str, shape) -> Tensor:
        """Create a parameter with uniform(-init_scale, init_scale) values."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        vals = self._rng.uniform(-self.init_scale, self.init_scale, size=shape)
        t = Tensor(vals, requires_grad=True)
        self._params[name] = t
        return t

    def new_zeros(self, name: str, shape) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.zeros(shape), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def count_values(self) -> int:
        return sum(t.values.size for t in self._params.values())

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def sgd_step(self, lr: float):
        """values -= lr * grad for every parameter."""
        for t in self._params.values():
            t.values -= lr * t.grad

    def check_finite(self):
        """Raise FloatingPointError naming the first non-finite parameter."""
        for name, t in self._params.items():
            if not np.all(np.isfinite(t.values)):
                raise FloatingPointError(f"non-finite values in parameter {name!r}")

    # -- checkpoint format: text header, then raw little-endian float64 ----
    #
    #   KDMN-CKPT-1\n
    #   <count>\n
    #   <name>\t<d0>,<d1>\n   (one line per tensor, creation order;
    #                          rank 1 writes one dim, rank 0 writes none)
    #   <concatenated C-order '<f8' payload>

    def save(self, path: str):
        with open(path, "wb") as fh:
            lines = [_MAGIC, str(len(self._params))]
            for name, t in self._params.items():
                dims = ",".join(str(d) for d in t.values.shape)
                lines.append(f"{name}\t{dims}")
            fh.write(("\n".join(lines) + "\n").encode("utf-8"))
            for t in self._params.values():
                fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())

    def load(self, path: str):
        """Load values into existing parameters; names and shapes must match."""
        with open(path, "rb") as fh:
            header = fh.readline().decode("utf-8").rstrip("\n")
            if header != _MAGIC:
                raise ValueError(f"not a checkpoint file: bad magic {header!r}")
            count = int(fh.readline().decode("utf-8"))
            if count != len(self._params):
                raise ValueError(
                    f"checkpoint holds {count} tensors, store has {len(self._params)}")
            entries = []
            for _ in range(count):
                line = fh.readline().decode("utf-8").rstrip("\n")
                name, _, dims = line.partition("\t")
                shape = tuple(int(d) for d in dims.split(",")) if dims else ()
                entries.append((name, shape))
            for name, shape in entries:
                if name not in self._params:
                    raise ValueError(f"checkpoint tensor {name!r} not in store")
                t = self._params[name]
                if t.values.shape != shape:
                    raise ValueError(
                        f"shape mismatch for {name!r}: checkpoint {shape}, "
                        f"store {t.values.shape}")
                n = int(np.prod(shape, dtype=np.int64)) if shape else 1
                raw = fh.read(8 * n)
                if len(raw) != 8 * n:
                    raise ValueError(f"truncated payload at tensor {name!r}")
                vals = np.frombuffer(raw, dtype="<f8").reshape(shape)
                if not np.all(np.isfinite(vals)):
                    raise ValueError(f"non-finite values in checkpoint tensor {name!r}")
                t.values[...] = vals
