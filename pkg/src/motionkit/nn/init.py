"""Seeded parameter initialisation.

Every initialiser draws from an explicit ``torch.Generator`` so models built
in different threads never share global RNG state.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def _uniform_(t: torch.Tensor, bound: float, gen: torch.Generator) -> None:
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)


def init_module(module: nn.Module, gen: torch.Generator) -> nn.Module:
    """He-uniform conv/linear weights, zero biases, unit BN scale, LSTM in
    ``+-1/sqrt(hidden)``. Modules are visited in registration order."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            _uniform_(m.weight, math.sqrt(6.0 / fan_in), gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.ConvTranspose2d):
            fan_in = m.weight.shape[0] * m.weight[0, 0].numel()
            _uniform_(m.weight, math.sqrt(6.0 / fan_in), gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LSTM):
            bound = 1.0 / math.sqrt(m.hidden_size)
            for name, p in m.named_parameters():
                if name.startswith("weight"):
                    _uniform_(p, bound, gen)
                else:
                    nn.init.zeros_(p)
    return module


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g
