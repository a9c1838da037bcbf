"""Encoder-decoder networks with skip connections."""

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..ingestion.schemas import ModelKind


def gamma_features(gamma: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of a continuous noise level γ, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=gamma.dtype, device=gamma.device) / half
    )
    args = 1000.0 * gamma[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


class ConvBlock(nn.Module):
    """Two 3×3 convolutions with group norm; optional embedding added after the first."""

    def __init__(self, in_channels: int, out_channels: int, emb_dim: Optional[int] = None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.emb = nn.Linear(emb_dim, out_channels) if emb_dim else None

    def forward(self, h: torch.Tensor, emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(h)))
        if self.emb is not None and emb is not None:
            h = h + self.emb(emb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class UNet(nn.Module):
    """
    U-Net with `levels` resolution levels, widths base_width·2^i.

    Average pooling down, nearest upsampling up, skip concatenation at every
    level above the bottleneck. Inputs must have sides divisible by
    2^(levels-1).
    """

    def __init__(
        self,
        in_channels: int = 1,
        out_channels: int = 1,
        base_width: int = 32,
        levels: int = 3,
        emb_dim: Optional[int] = None,
    ):
        super().__init__()
        self.levels = levels
        widths = [base_width * 2**i for i in range(levels)]

        self.down = nn.ModuleList()
        ch = in_channels
        for w in widths:
            self.down.append(ConvBlock(ch, w, emb_dim))
            ch = w
        self.mid = ConvBlock(ch, ch, emb_dim)
        self.up = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.up.append(ConvBlock(ch + w, w, emb_dim))
            ch = w
        self.out = nn.Conv2d(ch, out_channels, 1)

    def forward(self, h: torch.Tensor, emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        factor = 2 ** (self.levels - 1)
        if h.shape[-1] % factor or h.shape[-2] % factor:
            raise ValueError(
                f"Image sides must be divisible by {factor} for a {self.levels}-level U-Net, "
                f"got {tuple(h.shape[-2:])}"
            )
        skips = []
        for i, block in enumerate(self.down):
            if i > 0:
                h = F.avg_pool2d(h, 2)
            h = block(h, emb)
            skips.append(h)
        h = self.mid(h, emb)
        skips.pop()
        for block in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(h)


class ConditionalUNet(nn.Module):
    """ε-predictor f(x, y_t, γ).

    The noisy condition x and the iterate y_t are stacked as two input
    channels; γ enters through sinusoidal features and a small MLP, added at
    every resolution level.
    """

    def __init__(self, base_width: int = 32, levels: int = 3, emb_dim: Optional[int] = None):
        super().__init__()
        self.base_width = base_width
        self.emb_dim = emb_dim or 4 * base_width
        self.gamma_mlp = nn.Sequential(
            nn.Linear(self.emb_dim, self.emb_dim),
            nn.SiLU(),
            nn.Linear(self.emb_dim, self.emb_dim),
        )
        self.unet = UNet(2, 1, base_width, levels, self.emb_dim)
        self.image_size: Optional[int] = None

    def forward(self, x: torch.Tensor, y_t: torch.Tensor, gamma) -> torch.Tensor:
        gamma = torch.as_tensor(gamma, dtype=y_t.dtype, device=y_t.device).reshape(-1)
        if gamma.numel() == 1:
            gamma = gamma.expand(y_t.shape[0])
        emb = self.gamma_mlp(gamma_features(gamma, self.emb_dim))
        return self.unet(torch.cat([x, y_t], dim=1), emb)

    def architecture(self) -> dict:
        return {"base_width": self.base_width, "levels": self.unet.levels, "emb_dim": self.emb_dim}


class PostUNet(nn.Module):
    """Lightweight single-channel refinement network; predicts a correction added to its input."""

    def __init__(self, base_width: int = 16, levels: int = 3):
        super().__init__()
        self.base_width = base_width
        self.unet = UNet(1, 1, base_width, levels)
        self.image_size: Optional[int] = None

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return image + self.unet(image)

    def architecture(self) -> dict:
        return {"base_width": self.base_width, "levels": self.unet.levels}


def build_model(kind: ModelKind, architecture: dict) -> nn.Module:
    if kind == ModelKind.DIFFUSION:
        return ConditionalUNet(**architecture)
    if kind == ModelKind.POST:
        return PostUNet(**architecture)
    raise ValueError(f"Unknown model kind: {kind}")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def check_image_shape(model: nn.Module, shape: tuple[int, ...]) -> None:
    """Reject images whose (H, W) differs from the size the model was trained on."""
    size = getattr(model, "image_size", None)
    if size is not None and tuple(shape[-2:]) != (size, size):
        raise ValueError(
            f"Model was trained on {size}×{size} images, got {tuple(shape[-2:])}"
        )
