from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DeterminismError


def grad_check(f, params, eps: float = 1e-5, max_coords: int = 20, seed: int = 0) -> float:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``f`` takes no arguments and reads ``params`` by reference. Up to
    ``max_coords`` coordinates per parameter are sampled. Returns
    ``max |analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for p in params:
        if p.data.dtype != np.float64:
            raise ConfigError("grad_check requires 64-bit parameters")
        p.grad = None

    out = f()
    again = f()
    if out.item() != again.item():
        raise DeterminismError("f() returned different values on repeated evaluation")
    out.backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
