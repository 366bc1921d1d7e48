from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None],
              state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place.

    Moment buffers are created lazily on the first call. A ``None`` gradient
    counts as zero.
    """
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-lr / c1)
    return state


class Adam:
    """Thin convenience wrapper binding :func:`adam_step` to a parameter list."""

    def __init__(self, params, lr: float):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)
