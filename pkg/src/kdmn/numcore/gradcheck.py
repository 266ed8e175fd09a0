"""Central-difference gradient verification.

Compares analytic gradients from the reverse pass against
(f(x+eps) - f(x-eps)) / (2 eps) for every component of the checked
tensors. Used by the test suite and the `gradcheck` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn, tensors, eps: float = 1e-5) -> float:
    """Max relative error across all components of all checked tensors.

    fn: () -> scalar Tensor, recomputed from the current tensor values.
    tensors: iterable of requires_grad Tensors perturbed in place.
    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    tensors = list(tensors)
    for t in tensors:
        if not t.requires_grad:
            raise ValueError("grad_check tensors must have requires_grad=True")
        t.zero_grad()
    out = fn()
    backward(out)
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        ana_flat = ana.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            hi = fn().item()
            flat[k] = saved - eps
            lo = fn().item()
            flat[k] = saved
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(ana_flat[k]), abs(numeric), 1e-8)
            err = abs(ana_flat[k] - numeric) / denom
            if err > worst:
                worst = err
    return worst
