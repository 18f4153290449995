"""Noise-prediction backend with per-layer feature capture and injection.

The toy U-Net is seeded and never trained; it exists so the injection
mechanics (residual replacement, q/k and k/v attention overrides, capture of
per-layer internals) can be verified algebraically at desk scale.

Global layer ids: 0-1 encoder blocks, 2 bottleneck, 3-11 decoder blocks.
Decoder ids follow the conventional 12-layer decoder numbering of latent
diffusion U-Nets: ids 3-5 run at 1/4 of the latent resolution, 6-8 at 1/2,
9-11 at full resolution (16/32/64 squared on a 64x64 latent).  Only decoder
blocks have self-attention; encoder blocks are listed but are not valid
injection sites.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from . import tensorio
from .errors import ConfigurationError, InjectionError, ShapeError

ENCODER_IDS = (0, 1, 2)
DECODER_IDS = tuple(range(3, 12))
_DIVISORS = {0: 1, 1: 2, 2: 4, 3: 4, 4: 4, 5: 4, 6: 2, 7: 2, 8: 2, 9: 1, 10: 1, 11: 1}


@dataclass(frozen=True)
class LayerDescriptor:
    index: int
    side: str                 # "encoder" or "decoder"
    res_divisor: int          # spatial dims = latent dims / res_divisor
    has_self_attn: bool
    has_residual: bool


@dataclass
class LayerInternals:
    """Per-layer tensors captured during one forward pass.

    ``q``/``k``/``v`` are the organic projections of this branch's own
    attention input; ``used_*`` are the operands that actually entered the
    attention product after any override.
    """

    layer: LayerDescriptor
    residual_in: torch.Tensor | None = None   # residual-path increment
    attn_in: torch.Tensor | None = None       # attention input feature map
    q: torch.Tensor | None = None
    k: torch.Tensor | None = None
    v: torch.Tensor | None = None
    used_q: torch.Tensor | None = None
    used_k: torch.Tensor | None = None
    used_v: torch.Tensor | None = None
    attn_out: torch.Tensor | None = None      # attention product, folded to (c, h, w)
    attn_probs: torch.Tensor | None = None    # (n, n), only when requested


@dataclass(frozen=True)
class InjectionDirective:
    """Per-layer overrides applied before the corresponding sublayer runs.

    At most one attention override kind (qk or kv) per layer.
    """

    residual: dict[int, torch.Tensor] = field(default_factory=dict)
    attn_qk: dict[int, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)
    attn_kv: dict[int, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        both = set(self.attn_qk) & set(self.attn_kv)
        if both:
            raise InjectionError(
                f"layers {sorted(both)} carry both qk and kv overrides")

    def is_empty(self) -> bool:
        return not (self.residual or self.attn_qk or self.attn_kv)

    def kinds(self) -> list[str]:
        out = []
        if self.residual:
            out.append("residual")
        if self.attn_qk:
            out.append("attn_qk")
        if self.attn_kv:
            out.append("attn_kv")
        return out


class AttnResult(NamedTuple):
    out: torch.Tensor          # (n, c) attention product
    q: torch.Tensor
    k: torch.Tensor
    v: torch.Tensor
    used_q: torch.Tensor
    used_k: torch.Tensor
    used_v: torch.Tensor
    probs: torch.Tensor | None  # (n, n), only when requested

_ATTN_BLOCK = 512


def _attention_product(used_q: torch.Tensor, used_k: torch.Tensor,
                       used_v: torch.Tensor, need_probs: bool,
                       ) -> tuple[torch.Tensor, torch.Tensor | None]:
    scale = 1.0 / math.sqrt(used_q.shape[1])
    if need_probs:
        probs = torch.softmax(used_q @ used_k.T * scale, dim=-1)
        return probs @ used_v, probs
    # row-blocked softmax: same per-row math, far less memory traffic
    n = used_q.shape[0]
    out = torch.empty(n, used_v.shape[1])
    kt = used_k.T.contiguous()
    for i in range(0, n, _ATTN_BLOCK):
        scores = used_q[i:i + _ATTN_BLOCK] @ kt * scale
        out[i:i + _ATTN_BLOCK] = torch.softmax(scores, dim=-1) @ used_v
    return out, None


def attention_with_override(phi_tokens: torch.Tensor, wq: torch.Tensor,
                            wk: torch.Tensor, wv: torch.Tensor,
                            override: tuple[str, torch.Tensor, torch.Tensor] | None = None,
                            need_probs: bool = False) -> AttnResult:
    """Scaled dot-product self-attention over (n, c) tokens.

    ``override`` is ``("qk", Q_src, K_src)`` or ``("kv", K_src, V_src)``; the
    substituted operands replace the local ones before the attention map is
    formed, the remaining operand stays the local branch's own projection.
    """
    q = phi_tokens @ wq
    k = phi_tokens @ wk
    v = phi_tokens @ wv
    used_q, used_k, used_v = q, k, v
    if override is not None:
        mode, first, second = override
        if mode == "qk":
            used_q, used_k = first, second
        elif mode == "kv":
            used_k, used_v = first, second
        else:
            raise InjectionError(f"unknown attention override mode {mode!r}")
        if used_q.shape != q.shape or used_k.shape != k.shape or used_v.shape != v.shape:
            raise ShapeError(
                f"attention override shapes q{tuple(used_q.shape)} k{tuple(used_k.shape)} "
                f"v{tuple(used_v.shape)} do not match local q{tuple(q.shape)} "
                f"k{tuple(k.shape)} v{tuple(v.shape)}")
    out, probs = _attention_product(used_q, used_k, used_v, need_probs)
    return AttnResult(out, q, k, v, used_q, used_k, used_v, probs)


def self_attention(phi_tokens: torch.Tensor, weights: tuple[torch.Tensor, ...],
                   override: tuple[str, torch.Tensor, torch.Tensor] | None = None,
                   ) -> torch.Tensor:
    """Attention product only; see :func:`attention_with_override`."""
    wq, wk, wv = weights
    return attention_with_override(phi_tokens, wq, wk, wv, override).out


def timestep_embedding(t: int, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32)
                      / max(half - 1, 1))
    ang = t * freqs
    return torch.cat([torch.cos(ang), torch.sin(ang)])


@dataclass(frozen=True)
class ToyUNetConfig:
    latent_channels: int = 3
    widths: tuple[int, int, int] = (12, 16, 24)   # channels at full, 1/2, 1/4 res
    attn_dim: int = 8
    text_dim: int = 32
    temb_dim: int = 32
    cross_gain: float = 0.3
    out_gain: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        if any(w % 4 for w in self.widths):
            raise ConfigurationError("widths must be divisible by 4 (GroupNorm groups)")


class _ResBlock(nn.Module):
    """Residual block; exposes the residual-path increment for capture/override."""

    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(4, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(4, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.shortcut = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def increment(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = x.unsqueeze(0)
        h = self.conv1(F.silu(self.norm1(h)))
        h = h + self.temb(temb)[None, :, None, None]
        return self.conv2(F.silu(self.norm2(h))).squeeze(0)


class _DecoderBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, cfg: ToyUNetConfig):
        super().__init__()
        self.res = _ResBlock(c_in, c_out, cfg.temb_dim)
        d = cfg.attn_dim
        self.wq = nn.Parameter(torch.empty(c_out, d))
        self.wk = nn.Parameter(torch.empty(c_out, d))
        self.wv = nn.Parameter(torch.empty(c_out, c_out))
        self.cross_q = nn.Parameter(torch.empty(c_out, d))
        self.cross_k = nn.Parameter(torch.empty(cfg.text_dim, d))
        self.cross_v = nn.Parameter(torch.empty(cfg.text_dim, c_out))
        self.cross_gain = cfg.cross_gain


class ToyUNet(nn.Module):
    """Seeded random U-Net exposing layer internals and injection hooks."""

    def __init__(self, config: ToyUNetConfig | None = None):
        super().__init__()
        cfg = config or ToyUNetConfig()
        self.config = cfg
        c0, c1, c2 = cfg.widths
        self.conv_in = nn.Conv2d(cfg.latent_channels, c0, 3, padding=1)
        self.enc0 = _ResBlock(c0, c0, cfg.temb_dim)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = _ResBlock(c1, c1, cfg.temb_dim)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid = _ResBlock(c2, c2, cfg.temb_dim)
        self.dec = nn.ModuleDict({
            "3": _DecoderBlock(2 * c2, c2, cfg),
            "4": _DecoderBlock(c2, c2, cfg),
            "5": _DecoderBlock(c2, c2, cfg),
            "6": _DecoderBlock(2 * c1, c1, cfg),
            "7": _DecoderBlock(c1, c1, cfg),
            "8": _DecoderBlock(c1, c1, cfg),
            "9": _DecoderBlock(2 * c0, c0, cfg),
            "10": _DecoderBlock(c0, c0, cfg),
            "11": _DecoderBlock(c0, c0, cfg),
        })
        self.up0 = nn.Conv2d(c2, c1, 3, padding=1)
        self.up1 = nn.Conv2d(c1, c0, 3, padding=1)
        self.temb_mlp = nn.Sequential(nn.Linear(cfg.temb_dim, cfg.temb_dim), nn.SiLU(),
                                      nn.Linear(cfg.temb_dim, cfg.temb_dim))
        self.norm_out = nn.GroupNorm(4, c0)
        self.conv_out = nn.Conv2d(c0, cfg.latent_channels, 3, padding=1)
        self._seed_parameters(cfg.seed)
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def _seed_parameters(self, seed: int) -> None:
        # attention projections are stored (in, out); Linear/Conv weights (out, in, ...)
        g = torch.Generator().manual_seed(seed)
        in_first = ("wq", "wk", "wv", "cross_q", "cross_k", "cross_v")
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if p.ndim >= 2:
                    if name.rsplit(".", 1)[-1] in in_first:
                        fan_in = p.shape[0]
                    else:
                        fan_in = p.shape[1] * (p.shape[2] * p.shape[3] if p.ndim == 4 else 1)
                    p.copy_(torch.randn(p.shape, generator=g) / math.sqrt(fan_in))
                elif "norm" in name and name.endswith("weight"):
                    p.copy_(torch.ones(p.shape))
                else:
                    p.copy_(torch.zeros(p.shape))

    # ---- layer map ----

    def list_layers(self) -> list[LayerDescriptor]:
        layers = [LayerDescriptor(i, "encoder", _DIVISORS[i], False, True)
                  for i in ENCODER_IDS]
        layers += [LayerDescriptor(i, "decoder", _DIVISORS[i], True, True)
                   for i in DECODER_IDS]
        return layers

    # ---- forward ----

    def _check_directives(self, directives: InjectionDirective | None, t: int) -> None:
        if directives is None:
            return
        known = set(ENCODER_IDS) | set(DECODER_IDS)
        for lid in [*directives.residual, *directives.attn_qk, *directives.attn_kv]:
            if lid not in known:
                raise InjectionError(f"step {t}: directive targets unknown layer {lid}")
        for lid in [*directives.attn_qk, *directives.attn_kv]:
            if lid not in DECODER_IDS:
                raise InjectionError(
                    f"step {t}: layer {lid} has no self-attention to override")
        for lid in directives.residual:
            if lid not in DECODER_IDS:
                raise InjectionError(
                    f"step {t}: residual override targets non-decoder layer {lid}")

    def _run_decoder_block(self, lid: int, x: torch.Tensor, temb: torch.Tensor,
                           cond: torch.Tensor, directives: InjectionDirective | None,
                           rec: LayerInternals | None, capture_probs: bool, t: int,
                           ) -> torch.Tensor:
        block: _DecoderBlock = self.dec[str(lid)]
        delta = block.res.increment(x, temb)
        if rec is not None:
            rec.residual_in = delta.clone()
        if directives is not None and lid in directives.residual:
            src = directives.residual[lid]
            if src.shape != delta.shape:
                raise InjectionError(
                    f"step {t}, layer {lid}: residual override shape "
                    f"{tuple(src.shape)} != {tuple(delta.shape)}")
            delta = src
        phi = block.res.shortcut(x) + delta
        if rec is not None:
            rec.attn_in = phi.clone()

        c, h, w = phi.shape
        tokens = phi.reshape(c, h * w).T
        override = None
        if directives is not None:
            if lid in directives.attn_qk:
                override = ("qk", *directives.attn_qk[lid])
            elif lid in directives.attn_kv:
                override = ("kv", *directives.attn_kv[lid])
        try:
            attn = attention_with_override(tokens, block.wq, block.wk, block.wv,
                                           override, need_probs=capture_probs)
        except ShapeError as exc:
            raise InjectionError(f"step {t}, layer {lid}: {exc}") from exc
        if rec is not None:
            rec.q, rec.k, rec.v = attn.q.clone(), attn.k.clone(), attn.v.clone()
            rec.used_q, rec.used_k = attn.used_q.clone(), attn.used_k.clone()
            rec.used_v = attn.used_v.clone()
            rec.attn_out = attn.out.T.reshape(c, h, w).clone()
            if capture_probs:
                rec.attn_probs = attn.probs.clone()
        x = phi + attn.out.T.reshape(c, h, w)

        q2 = x.reshape(c, h * w).T @ block.cross_q
        k2 = cond @ block.cross_k
        v2 = cond @ block.cross_v
        ca = torch.softmax(q2 @ k2.T / math.sqrt(q2.shape[1]), dim=-1) @ v2
        return x + block.cross_gain * ca.T.reshape(c, h, w)

    def predict_noise(self, z: torch.Tensor, t: int, cond: torch.Tensor,
                      directives: InjectionDirective | None = None,
                      capture: bool = False, capture_probs: bool = False,
                      ) -> tuple[torch.Tensor, dict[int, LayerInternals]]:
        """Noise prediction with optional per-layer capture and overrides.

        ``z`` is a (C, H, W) latent, ``t`` a training timestep, ``cond`` a
        (n_tokens, text_dim) embedding.  Captured internals hold the organic
        (pre-override) features of every decoder layer plus the operands the
        attention actually used.
        """
        if z.ndim != 3 or z.shape[0] != self.config.latent_channels:
            raise ShapeError(
                f"latent must be ({self.config.latent_channels}, H, W), got {tuple(z.shape)}")
        if z.shape[1] % 4 or z.shape[2] % 4:
            raise ShapeError(f"latent dims {tuple(z.shape[1:])} must be divisible by 4")
        if cond.ndim != 2 or cond.shape[1] != self.config.text_dim:
            raise ConfigurationError(
                f"cond must be (n_tokens, {self.config.text_dim}), got {tuple(cond.shape)}")
        self._check_directives(directives, t)

        desc = {d.index: d for d in self.list_layers()}
        internals: dict[int, LayerInternals] = {}
        with torch.no_grad():
            temb = self.temb_mlp(timestep_embedding(t, self.config.temb_dim))
            h = self.conv_in(z.unsqueeze(0)).squeeze(0)
            for lid, block in ((0, self.enc0), (1, self.enc1)):
                delta = block.increment(h, temb)
                if capture:
                    internals[lid] = LayerInternals(layer=desc[lid],
                                                    residual_in=delta.clone())
                h = block.shortcut(h) + delta
                if lid == 0:
                    e0 = h
                    h = self.down0(h.unsqueeze(0)).squeeze(0)
                else:
                    e1 = h
                    h = self.down1(h.unsqueeze(0)).squeeze(0)
            e2 = h
            delta = self.mid.increment(h, temb)
            if capture:
                internals[2] = LayerInternals(layer=desc[2], residual_in=delta.clone())
            h = self.mid.shortcut(h) + delta

            skips = {3: e2, 6: e1, 9: e0}
            for lid in DECODER_IDS:
                if lid in skips:
                    h = torch.cat([h, skips[lid]], dim=0)
                rec = LayerInternals(layer=desc[lid]) if capture else None
                h = self._run_decoder_block(lid, h, temb, cond, directives, rec,
                                            capture_probs, t)
                if rec is not None:
                    internals[lid] = rec
                if lid == 5:
                    h = self.up0(F.interpolate(h.unsqueeze(0), scale_factor=2,
                                               mode="nearest")).squeeze(0)
                elif lid == 8:
                    h = self.up1(F.interpolate(h.unsqueeze(0), scale_factor=2,
                                               mode="nearest")).squeeze(0)
            eps = self.conv_out(F.silu(self.norm_out(h.unsqueeze(0)))).squeeze(0)
            eps = self.config.out_gain * eps
        return eps, internals

    # ---- weight serialization (raw-tensor dump format) ----

    def save_weights(self, directory: str | Path) -> Path:
        meta = {"kind_detail": "toy_unet_weights", "seed": self.config.seed,
                "widths": list(self.config.widths)}
        tensors = {name: p.data for name, p in sorted(self.named_parameters())}
        return tensorio.save_tensors(directory, "toy_unet", meta, tensors)

    def load_weights(self, directory: str | Path) -> None:
        _, tensors = tensorio.load_tensors(directory)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name not in tensors:
                    raise ConfigurationError(f"weight dump missing parameter {name!r}")
                if tuple(tensors[name].shape) != tuple(p.shape):
                    raise ShapeError(f"parameter {name!r} shape mismatch in dump")
                p.copy_(tensors[name])


def list_layers(backend) -> list[LayerDescriptor]:
    """Stable layer listing of a denoiser backend."""
    return backend.list_layers()


def make_backend(name: str, **kwargs) -> ToyUNet:
    """Denoiser backend selected by config key."""
    from .errors import CapabilityError
    if name == "toy":
        return ToyUNet(ToyUNetConfig(**kwargs))
    if name == "external":
        raise CapabilityError(
            "external pretrained denoiser backends are not bundled; use 'toy'")
    raise ConfigurationError(f"unknown denoiser backend {name!r}")
