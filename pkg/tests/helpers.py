"""Shared oracles for the test-suite."""

from __future__ import annotations

import itertools

import numpy as np
import torch


def fd_check(fn, tensors, rng: np.random.Generator, eps: float = 1e-6, max_coords: int = 12):
    """Central finite differences of ``sum(w * fn())`` against autograd.

    ``tensors`` are float64 leaves with ``requires_grad``. Up to ``max_coords``
    random coordinates per tensor are probed. Returns the worst relative error
    ``|a - n| / max(|a|, |n|, 1e-6)`` over the probed vectors (norm-wise per
    tensor).
    """
    with torch.no_grad():
        out0 = fn()
    w = torch.from_numpy(rng.normal(size=tuple(out0.shape))).to(out0.dtype)

    def scalar():
        return (fn() * w).sum()

    for t in tensors:
        t.grad = None
    scalar().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.detach().clone().reshape(-1)
        flat = t.data.reshape(-1)
        coords = rng.choice(flat.numel(), size=min(max_coords, flat.numel()), replace=False)
        a = analytic[coords].numpy()
        n = np.zeros_like(a)
        with torch.no_grad():
            for j, c in enumerate(coords):
                old = float(flat[c])
                flat[c] = old + eps
                up = float(scalar())
                flat[c] = old - eps
                down = float(scalar())
                flat[c] = old
                n[j] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def brute_force_ot(C: np.ndarray) -> float:
    """Exact optimum of the uniform-marginal transport LP. Its vertices are
    permutation matrices scaled by 1/n (Birkhoff), so enumerating them is exact."""
    n = C.shape[0]
    return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n
