"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor


class NonFiniteError(ArithmeticError):
    pass


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_per_param: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds a scalar graph from the current values of ``params`` on
    every call. The error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    With ``max_per_param`` set, larger tensors are checked on that many
    coordinates drawn without replacement (seeded).
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Graph() as g:
        out = f()
        if out.data.size != 1:
            raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
        if not np.isfinite(out.data).all():
            raise NonFiniteError("function value is not finite at the check point")
        g.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = range(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            coords = sorted(rng.choice(flat.size, size=max_per_param, replace=False))
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(f().data)
            flat[k] = orig - eps
            lo = float(f().data)
            flat[k] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError(f"function value not finite when perturbing {p.name or 'param'}[{k}]")
            num = (hi - lo) / (2.0 * eps)
            ana = float(a.reshape(-1)[k])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
