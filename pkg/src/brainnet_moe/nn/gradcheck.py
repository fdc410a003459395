"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor, no_grad


def sample_coordinates(params: Sequence[Tensor], n_samples: int, rng: np.random.Generator):
    """Pick ``(param index, flat index)`` pairs, at least one per tensor.

    Every tensor gets one coordinate first; the rest are drawn uniformly over
    all remaining coordinates without replacement.
    """
    sizes = [p.size for p in params]
    chosen = []
    for i, size in enumerate(sizes):
        chosen.append((i, int(rng.integers(size))))
    total = sum(sizes)
    remaining = max(0, min(n_samples, total) - len(chosen))
    if remaining:
        offsets = np.cumsum([0] + sizes)
        taken = {int(offsets[i]) + j for i, j in chosen}
        pool = np.setdiff1d(np.arange(total), np.fromiter(taken, dtype=np.int64))
        for flat in rng.choice(pool, size=min(remaining, pool.size), replace=False):
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            chosen.append((i, int(flat - offsets[i])))
    return chosen


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], n_samples: int = 100,
               step: float = 1e-5, seed: int = 0, return_details: bool = False):
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and closes over ``params``; coordinates are
    perturbed in place and restored. Relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericalError("objective is not finite at the probe point")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    details = []
    worst = 0.0
    with no_grad():
        for i, j in sample_coordinates(params, n_samples, rng):
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            up = float(f().data)
            flat[j] = orig - step
            down = float(f().data)
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"objective not finite while probing parameter {i}[{j}]")
            numeric = (up - down) / (2.0 * step)
            a = float(analytic[i].reshape(-1)[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
            details.append((i, j, a, numeric, rel))
    if return_details:
        return worst, details
    return worst
