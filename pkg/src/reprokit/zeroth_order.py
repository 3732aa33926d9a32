"""Forward-difference gradient estimation from function values only."""

from __future__ import annotations

import numpy as np


def sphere_directions(dim: int, q: int, seed) -> np.ndarray:
    """``q`` directions drawn uniformly on the unit sphere in R^dim, shape (q, dim)."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((q, dim))
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    # a zero draw has probability 0 but would divide by zero
    while np.any(norms == 0):
        bad = np.flatnonzero(norms[:, 0] == 0)
        u[bad] = rng.standard_normal((len(bad), dim))
        norms = np.linalg.norm(u, axis=1, keepdims=True)
    return u / norms


def zeroth_order_gradient(loss_fn, p, q: int = 20, mu: float = 1e-3, seed=0, f0=None) -> np.ndarray:
    """Estimate the gradient of ``loss_fn`` at ``p``.

    ``g = dim / (q * mu) * sum_i (loss_fn(p + mu * u_i) - loss_fn(p)) * u_i``
    with the u_i drawn on the unit sphere up front from ``seed``, so the probes
    are independent of evaluation order. Makes q + 1 calls to ``loss_fn``, or q
    when the base value ``f0`` is supplied by the caller.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    p = np.asarray(p, dtype=np.float64)
    dim = p.size
    if dim == 0:
        return np.zeros(0)
    u = sphere_directions(dim, q, seed)
    base = float(loss_fn(p)) if f0 is None else float(f0)
    if not np.isfinite(base):
        raise FloatingPointError(f"loss oracle returned non-finite value {base} at the base point")
    diffs = np.empty(q)
    for i in range(q):
        val = float(loss_fn(p + mu * u[i].reshape(p.shape)))
        if not np.isfinite(val):
            raise FloatingPointError(f"loss oracle returned non-finite value {val} on probe {i}")
        diffs[i] = val - base
    return (dim / (q * mu)) * (diffs @ u).reshape(p.shape)
