"""Motion classifier: two reparameterizable stages and a 512/512/n MLP head."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeMismatch
from .blocks import RepBlock, fuse_block
from .init import init_module, make_generator


def _half(n: int) -> int:
    return (n + 1) // 2


def dropout(x: torch.Tensor, p: float, gen: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout; survivors are scaled by ``1 / (1 - p)``."""
    if p <= 0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


class Classifier(nn.Module):
    def __init__(self, in_features: int, n_classes: int = 4, hidden: tuple[int, int] = (512, 512),
                 p_drop: float = 0.5):
        super().__init__()
        self.in_features = in_features
        self.fc1 = nn.Linear(in_features, hidden[0])
        self.fc2 = nn.Linear(hidden[0], hidden[1])
        self.fc3 = nn.Linear(hidden[1], n_classes)
        self.p_drop = p_drop

    @property
    def n_classes(self) -> int:
        return self.fc3.out_features

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"classifier expects (N, {self.in_features}), got {tuple(x.shape)}")
        return F.relu(self.fc2(F.relu(self.fc1(x))))

    def forward(self, x: torch.Tensor, train: bool = False,
                gen: torch.Generator | None = None) -> torch.Tensor:
        h = self.penultimate(x)
        if train:
            h = dropout(h, self.p_drop, gen)
        return self.fc3(h)

    def replace_head(self, n_classes: int, gen: torch.Generator) -> None:
        head = nn.Linear(self.fc2.out_features, n_classes).to(self.fc2.weight.dtype)
        init_module(head, gen)
        self.fc3 = head


def classifier_forward(features: torch.Tensor, params: Classifier, train: bool,
                       rng_seed: int = 0) -> torch.Tensor:
    gen = make_generator(rng_seed) if train else None
    return params(features, train=train, gen=gen)


class MotionNet(nn.Module):
    """Spectrogram image (N x 1 x T x F) to class logits."""

    arch = "motionnet-rep2"

    def __init__(self, input_shape: tuple[int, int] = (128, 128), widths: tuple[int, ...] = (32, 64),
                 n_classes: int = 4, hidden: tuple[int, int] = (512, 512), p_drop: float = 0.5):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.widths = tuple(widths)
        chans = (1,) + self.widths
        self.stages = nn.ModuleList(
            RepBlock(chans[i], chans[i + 1], stride=2) for i in range(len(self.widths))
        )
        h, w = self.input_shape
        for _ in self.widths:
            h, w = _half(h), _half(w)
        self.flat_dim = self.widths[-1] * h * w
        self.classifier = Classifier(self.flat_dim, n_classes, hidden, p_drop)

    @property
    def n_classes(self) -> int:
        return self.classifier.n_classes

    @property
    def is_fused(self) -> bool:
        return all(b.fused is not None for b in self.stages)

    def features(self, x: torch.Tensor, mode: str | None = None) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if tuple(x.shape[-2:]) != self.input_shape:
            raise ShapeMismatch(f"model expects {self.input_shape} images, got {tuple(x.shape[-2:])}")
        for block in self.stages:
            x = block(x, mode)
        return x.flatten(1)

    def forward(self, x: torch.Tensor, gen: torch.Generator | None = None,
                mode: str | None = None) -> torch.Tensor:
        train = self.training if mode is None else mode == "train"
        return self.classifier(self.features(x, mode), train=train, gen=gen)

    def fuse(self) -> "MotionNet":
        for block in self.stages:
            fuse_block(block)
        return self.eval()

    def feature_extractor_state(self) -> dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items() if k.startswith("stages.")}


def build_motion_net(seed: int, **kwargs) -> MotionNet:
    net = MotionNet(**kwargs)
    init_module(net, make_generator(seed))
    return net
