"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``. With
    ``max_coords`` set, each parameter is probed at that many randomly
    chosen coordinates instead of all of them.
    """
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite loss")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        if not np.isfinite(analytic).all():
            raise FloatingPointError(f"non-finite gradient in {p.name}")
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            up = f().item()
            flat[c] = old - h
            down = f().item()
            flat[c] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss probing {p.name}[{c}]")
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return float(worst)
