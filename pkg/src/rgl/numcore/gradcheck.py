from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` rebuilds the scalar loss from ``params`` on every call.  The relative
    error of a coordinate is ``|a - n| / max(|a| + |n|, floor)``.  With
    ``max_coords`` only that many seeded coordinates per tensor are probed.
    """
    for p in params:
        p.zero_grad()
    backward(f())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a) + abs(num), floor)
            worst = max(worst, err)
    return worst
