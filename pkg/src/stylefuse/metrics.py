"""Desk-scale evaluation: feature-space content loss, Gram-matrix style loss,
and pixel MSE, over a seeded random-convolution extractor.

LPIPS and image-image CLIP similarity live behind optional adapters that
require pretrained networks; they raise a capability error when unavailable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .codec import ImageAsset
from .errors import CapabilityError, ConfigurationError, ShapeError


@dataclass(frozen=True)
class FeatureExtractor:
    """Stack of seeded random convolutions; features taken at ``layers``."""

    backend: str = "toy_random_conv"
    layers: tuple[int, ...] = (0, 1, 2)
    channels: tuple[int, ...] = (8, 16, 16)
    kernel_size: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.backend != "toy_random_conv":
            raise CapabilityError(
                f"feature extractor backend {self.backend!r} is not bundled")
        if max(self.layers, default=0) >= len(self.channels):
            raise ConfigurationError("layer index beyond configured conv stack")

    def _weights(self) -> list[torch.Tensor]:
        g = torch.Generator().manual_seed(self.seed)
        ws = []
        c_in = 3
        for c_out in self.channels:
            fan = c_in * self.kernel_size ** 2
            ws.append(torch.randn(c_out, c_in, self.kernel_size, self.kernel_size,
                                  generator=g) / math.sqrt(fan))
            c_in = c_out
        return ws

    def features(self, img: ImageAsset) -> list[torch.Tensor]:
        h = img.pixels.unsqueeze(0)
        out = []
        for i, w in enumerate(self._weights()):
            h = F.leaky_relu(F.conv2d(h, w, padding=self.kernel_size // 2), 0.2)
            if i in self.layers:
                out.append(h.squeeze(0))
        return out


def _check_dims(a: ImageAsset, b: ImageAsset) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(
            f"image dims differ: {tuple(a.pixels.shape)} vs {tuple(b.pixels.shape)}")


def content_loss(gen: ImageAsset, content: ImageAsset,
                 fx: FeatureExtractor | None = None) -> float:
    """Mean squared feature distance over the extractor's configured layers."""
    _check_dims(gen, content)
    fx = fx or FeatureExtractor()
    total = 0.0
    for fg, fc in zip(fx.features(gen), fx.features(content)):
        total += F.mse_loss(fg, fc).item()
    return total / len(fx.layers)


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """Channel covariance of a (C, H, W) feature map, normalized by H*W."""
    c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return flat @ flat.T / (h * w)


def style_loss(gen: ImageAsset, style: ImageAsset,
               fx: FeatureExtractor | None = None) -> float:
    """Mean squared Gram-matrix distance; spatially permutation-invariant."""
    _check_dims(gen, style)
    fx = fx or FeatureExtractor()
    total = 0.0
    for fg, fs in zip(fx.features(gen), fx.features(style)):
        total += F.mse_loss(gram_matrix(fg), gram_matrix(fs)).item()
    return total / len(fx.layers)


def pixel_mse(a: ImageAsset, b: ImageAsset) -> float:
    _check_dims(a, b)
    return F.mse_loss(a.pixels, b.pixels).item()


def write_report(rows: list[dict], path: str | Path) -> None:
    """CSV report: one row per image pair (L_c, L_s, MSE, runtime)."""
    fieldnames = ["content", "style", "generated", "content_loss", "style_loss",
                  "pixel_mse", "runtime_s"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def lpips_distance(a: ImageAsset, b: ImageAsset) -> float:
    """Adapter slot; the pretrained LPIPS network is not bundled."""
    raise CapabilityError("LPIPS requires a pretrained network; not bundled")


def clip_similarity(a: ImageAsset, b: ImageAsset) -> float:
    """Adapter slot; the pretrained CLIP image tower is not bundled."""
    raise CapabilityError("CLIP image similarity requires pretrained weights; not bundled")
