"""Image <-> latent codecs and PNG IO.

The toy codec is an exactly invertible per-patch map: pixels are rescaled to
[-1, 1], folded space-to-depth by the downscale factor, and mixed by a fixed
seeded orthogonal matrix.  With factor 1 the mix is the identity, so the
latent equals the rescaled pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .ddim import Latent
from .errors import CapabilityError, ConfigurationError, ShapeError

ROLES = ("content", "style", "output")


@dataclass(frozen=True)
class ImageAsset:
    """RGB image tensor (3, H, W) with values clamped to [0, 1]."""

    pixels: torch.Tensor
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown image role {self.role!r}")
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) pixels, got {tuple(self.pixels.shape)}")
        object.__setattr__(self, "pixels", self.pixels.clamp(0.0, 1.0))


def _orthogonal(dim: int, seed: int) -> torch.Tensor:
    g = np.random.default_rng(seed)
    q, r = np.linalg.qr(g.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))  # fix sign convention so the map is reproducible
    return torch.from_numpy(q.astype(np.float32))


@dataclass(frozen=True)
class LatentCodec:
    """Per-patch linear codec; invertible for the toy backend."""

    downscale_factor: int = 1
    latent_channels: int = 3
    backend: str = "toy"
    seed: int = 0
    _mix: torch.Tensor = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        f = self.downscale_factor
        if self.backend == "toy":
            if self.latent_channels != 3 * f * f:
                raise ConfigurationError(
                    f"toy codec needs latent_channels == 3*f*f = {3 * f * f}, "
                    f"got {self.latent_channels}")
            if f == 1:
                mix = torch.eye(3)
            else:
                mix = _orthogonal(3 * f * f, self.seed)
            object.__setattr__(self, "_mix", mix)
        elif self.backend == "external":
            object.__setattr__(self, "_mix", torch.eye(1))
        else:
            raise ConfigurationError(f"unknown codec backend {self.backend!r}")


def encode(img: ImageAsset, codec: LatentCodec) -> Latent:
    """Map an image to a latent of shape (latent_channels, H/f, W/f)."""
    if codec.backend != "toy":
        raise CapabilityError(
            "external VAE codec is not bundled; configure backend='toy'")
    f = codec.downscale_factor
    _, h, w = img.pixels.shape
    if h % f or w % f:
        raise ShapeError(f"image dims {h}x{w} not divisible by downscale factor {f}")
    y = img.pixels * 2.0 - 1.0
    # space-to-depth: (3, H, W) -> (3*f*f, H/f, W/f)
    y = y.reshape(3, h // f, f, w // f, f).permute(0, 2, 4, 1, 3)
    y = y.reshape(3 * f * f, h // f, w // f)
    z = torch.einsum("ij,jhw->ihw", codec._mix, y)
    branch = {"content": "content", "style": "style", "output": "target"}[img.role]
    return Latent(data=z.contiguous(), step=0, branch=branch)


def decode(z: Latent, codec: LatentCodec, role: str = "output") -> ImageAsset:
    """Inverse of :func:`encode`; output pixels are clamped to [0, 1]."""
    if codec.backend != "toy":
        raise CapabilityError(
            "external VAE codec is not bundled; configure backend='toy'")
    f = codec.downscale_factor
    c, h, w = z.data.shape
    if c != codec.latent_channels:
        raise ShapeError(f"latent has {c} channels, codec expects {codec.latent_channels}")
    y = torch.einsum("ji,jhw->ihw", codec._mix, z.data)
    y = y.reshape(3, f, f, h, w).permute(0, 3, 1, 4, 2).reshape(3, h * f, w * f)
    return ImageAsset(pixels=(y + 1.0) / 2.0, role=role)


def load_png(path: str | Path, role: str) -> ImageAsset:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return ImageAsset(pixels=torch.from_numpy(arr).permute(2, 0, 1).contiguous(),
                      role=role)


def save_png(img: ImageAsset, path: str | Path) -> None:
    arr = (img.pixels.clamp(0, 1) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB").save(path, format="PNG")
