"""Reparameterizable conv block (3x3 + 1x1 + BN-identity branches)."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import DegenerateBN, FusedMissing, ShapeMismatch

MODES = ("train", "eval", "fused")


class RepBlock(nn.Module):
    """Multi-branch conv block that folds into a single 3x3 conv for inference.

    Training form: ``ReLU(BN(conv3x3(x)) + BN(conv1x1(x)) + BN(x))``, where the
    identity branch exists only when the block keeps channels and stride 1.
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int = 2, bn_eps: float = 1e-5):
        super().__init__()
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv3 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch, eps=bn_eps)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 1, stride, 0, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch, eps=bn_eps)
        self.bn_skip = nn.BatchNorm2d(in_ch, eps=bn_eps) if in_ch == out_ch and stride == 1 else None
        self.fused: nn.Conv2d | None = None

    def default_mode(self) -> str:
        if self.training:
            return "train"
        return "fused" if self.fused is not None else "eval"

    def forward(self, x: torch.Tensor, mode: str | None = None) -> torch.Tensor:
        return rep_block_forward(x, self, mode or self.default_mode())


def _bn(x: torch.Tensor, bn: nn.BatchNorm2d, batch_stats: bool) -> torch.Tensor:
    return F.batch_norm(x, bn.running_mean, bn.running_var, bn.weight, bn.bias,
                        training=batch_stats, momentum=bn.momentum, eps=bn.eps)


def rep_block_forward(x: torch.Tensor, block: RepBlock, mode: str) -> torch.Tensor:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if x.dim() != 4 or x.shape[1] != block.in_ch:
        raise ShapeMismatch(f"expected N x {block.in_ch} x H x W input, got {tuple(x.shape)}")
    if mode == "fused":
        if block.fused is None:
            raise FusedMissing("call fuse_block before running in fused mode")
        return F.relu(block.fused(x))
    batch_stats = mode == "train"
    out = _bn(block.conv3(x), block.bn3, batch_stats) + _bn(block.conv1(x), block.bn1, batch_stats)
    if block.bn_skip is not None:
        out = out + _bn(x, block.bn_skip, batch_stats)
    return F.relu(out)


def _fold(kernel: torch.Tensor, bn: nn.BatchNorm2d) -> tuple[torch.Tensor, torch.Tensor]:
    var = bn.running_var.double()
    if not torch.all(var > 0):
        raise DegenerateBN("batch-norm running variance must be positive")
    scale = bn.weight.double() / torch.sqrt(var + bn.eps)
    bias = bn.bias.double() - bn.running_mean.double() * scale
    return kernel * scale[:, None, None, None], bias


@torch.no_grad()
def fuse_block(block: RepBlock) -> RepBlock:
    """Fold every BN into its conv and sum the branches into one 3x3 conv.

    The computation runs in float64 and the result is stored in the block's
    dtype; the branch parameters are kept so the block can still be trained.
    """
    k3, b3 = _fold(block.conv3.weight.double(), block.bn3)
    k1, b1 = _fold(block.conv1.weight.double(), block.bn1)
    kernel = k3 + F.pad(k1, [1, 1, 1, 1])
    bias = b3 + b1
    if block.bn_skip is not None:
        ident = torch.zeros(block.in_ch, block.in_ch, 3, 3, dtype=torch.float64,
                            device=kernel.device)
        ident[torch.arange(block.in_ch), torch.arange(block.in_ch), 1, 1] = 1.0
        ks, bs = _fold(ident, block.bn_skip)
        kernel = kernel + ks
        bias = bias + bs
    dtype = block.conv3.weight.dtype
    conv = nn.Conv2d(block.in_ch, block.out_ch, 3, block.stride, 1, bias=True)
    conv = conv.to(dtype=dtype, device=kernel.device)
    conv.weight.copy_(kernel.to(dtype))
    conv.bias.copy_(bias.to(dtype))
    conv.requires_grad_(False)
    block.fused = conv
    return block
