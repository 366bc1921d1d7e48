"""CNN-LSTM encoder and its mirrored decoder for spectrogram synthesis.

The encoder runs three stride-2 conv stages, reads the feature map as a
time-major sequence through a single LSTM layer and projects the final
hidden state to a 512-d embedding. The decoder seeds an LSTM with the
embedding, maps each step back to a feature-map row and upsamples with
three transposed convs; a sigmoid keeps outputs in (0, 1).

Both halves carry fixed normalization buffers. The encoder standardizes its
input against a mean image and the decoder adds the logit of that mean
before the sigmoid, so the networks only model deviations from the average
spectrogram. Without this the model settles on the mean image and the
embedding carries no class information. The buffers default to the identity
(zero mean, unit scale) and are set by ``AutoEncoder.fit_normalization``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeMismatch
from .init import init_module, make_generator

EMBED_DIM = 512


def _reduced(n: int, stages: int) -> int:
    for _ in range(stages):
        n = (n + 1) // 2
    return n


class Encoder(nn.Module):
    def __init__(self, input_shape: tuple[int, int] = (128, 128),
                 channels: tuple[int, ...] = (8, 16, 32), hidden: int = 256,
                 embed_dim: int = EMBED_DIM):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.channels = tuple(channels)
        chans = (1,) + self.channels
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, 2, 1) for i in range(len(self.channels))
        )
        self.steps = _reduced(self.input_shape[0], len(self.channels))
        self.width = _reduced(self.input_shape[1], len(self.channels))
        self.lstm = nn.LSTM(self.channels[-1] * self.width, hidden, batch_first=True)
        self.proj = nn.Linear(hidden, embed_dim)
        self.register_buffer("center", torch.zeros(self.input_shape))
        self.register_buffer("scale", torch.ones(()))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[-2:]) != self.input_shape:
            raise ShapeMismatch(f"encoder expects {self.input_shape}, got {tuple(x.shape[-2:])}")
        x = (x - self.center) / self.scale
        if x.dim() == 3:
            x = x.unsqueeze(1)
        for conv in self.convs:
            x = F.relu(conv(x))
        # (N, C, T, W) -> (N, T, C * W)
        seq = x.permute(0, 2, 1, 3).flatten(2)
        _, (h, _) = self.lstm(seq)
        return self.proj(h[-1])


class Decoder(nn.Module):
    def __init__(self, output_shape: tuple[int, int] = (128, 128),
                 channels: tuple[int, ...] = (8, 16, 32), hidden: int = 256,
                 embed_dim: int = EMBED_DIM):
        super().__init__()
        self.output_shape = tuple(output_shape)
        self.channels = tuple(channels)
        self.embed_dim = embed_dim
        self.steps = _reduced(self.output_shape[0], len(self.channels))
        self.width = _reduced(self.output_shape[1], len(self.channels))
        self.seed_state = nn.Linear(embed_dim, hidden)
        self.lstm = nn.LSTM(embed_dim, hidden, batch_first=True)
        self.unproj = nn.Linear(hidden, self.channels[-1] * self.width)
        chans = (1,) + self.channels
        self.deconvs = nn.ModuleList(
            nn.ConvTranspose2d(chans[i + 1], chans[i], 3, 2, 1, output_padding=1)
            for i in reversed(range(len(self.channels)))
        )
        self.register_buffer("out_bias", torch.zeros(self.output_shape))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.embed_dim:
            raise ShapeMismatch(f"decoder expects {self.embed_dim}-d codes, got {z.shape[-1]}")
        n = z.shape[0]
        h0 = torch.tanh(self.seed_state(z)).unsqueeze(0)
        c0 = torch.zeros_like(h0)
        out, _ = self.lstm(z.unsqueeze(1).expand(n, self.steps, self.embed_dim).contiguous(), (h0, c0))
        x = self.unproj(out).view(n, self.steps, self.channels[-1], self.width).permute(0, 2, 1, 3)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(F.relu(x) if i else x)
        h, w = self.output_shape
        return torch.sigmoid(x[:, 0, :h, :w] + self.out_bias)


class AutoEncoder(nn.Module):
    arch = "cnn-lstm-ae"

    def __init__(self, input_shape: tuple[int, int] = (128, 128),
                 channels: tuple[int, ...] = (8, 16, 32), hidden: int = 256):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.encoder = Encoder(input_shape, channels, hidden)
        self.decoder = Decoder(input_shape, channels, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))

    @torch.no_grad()
    def fit_normalization(self, images, eps: float = 1e-3) -> "AutoEncoder":
        """Set the normalization buffers from a stack of (N, H, W) images."""
        x = torch.as_tensor(images, dtype=self.encoder.center.dtype)
        mean = x.mean(0)
        self.encoder.center.copy_(mean)
        self.encoder.scale.copy_(x.std().clamp_min(eps))
        self.decoder.out_bias.copy_(torch.logit(mean.clamp(eps, 1 - eps)))
        return self


def build_autoencoder(seed: int, **kwargs) -> AutoEncoder:
    ae = AutoEncoder(**kwargs)
    init_module(ae, make_generator(seed))
    return ae
