from __future__ import annotations

import numpy as np
import torch


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy, log-sum-exp stabilised."""
    lse = torch.logsumexp(logits, dim=1)
    picked = logits.gather(1, labels.long().view(-1, 1)).squeeze(1)
    return (lse - picked).mean()


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient ``softmax(z) - onehot(label)`` for one example."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    shifted = z - z.max()
    lse = np.log(np.exp(shifted).sum())
    p = np.exp(shifted - lse)
    grad = p.copy()
    grad[label] -= 1.0
    return float(lse - shifted[label]), grad


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean((a - b) ** 2)
