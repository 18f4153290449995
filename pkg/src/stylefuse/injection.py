"""Injection scheduling and feature banks.

The reverse process is split at a deciding step computed from the proportion
``alpha``: with the default order the early steps (t above the deciding
point) receive content injection (residual replacement plus q/k attention
override) and the late steps receive style injection (k/v attention
override).  Banks hold the branch features consumed by those directives,
captured by evaluating the denoiser at the branch's inversion latent for
each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch

from . import tensorio
from .ddim import LatentTrajectory
from .errors import BankError, ConfigurationError, InjectionError
from .schedule import NoiseSchedule
from .unet import DECODER_IDS, InjectionDirective

ORDERS = ("content_first", "style_first")
CONTENT_ATTN_MODES = ("qk", "kv")


def deciding_point(alpha: float, sample_steps: int) -> int:
    """Deciding step: floor(alpha * T), guarding float representation noise."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    if sample_steps < 1:
        raise ConfigurationError(f"sample_steps must be >= 1, got {sample_steps}")
    return int(math.floor(round(alpha * sample_steps, 9)))


def select_injection(t: int, t_alpha: int, order: str = "content_first") -> str:
    """Injection mode for step t: content iff t > t_alpha under the default
    order; mirrored under the style-first ablation."""
    if order not in ORDERS:
        raise ConfigurationError(f"unknown injection order {order!r}")
    if t < 1:
        raise ConfigurationError(f"step must be >= 1, got {t}")
    early = t > t_alpha
    if order == "content_first":
        return "content" if early else "style"
    return "style" if early else "content"


@dataclass(frozen=True)
class InjectionConfig:
    """The full control surface for a transfer run."""

    alpha: float = 0.2
    attn_layers: frozenset[int] = frozenset(range(4, 12))
    residual_layers: frozenset[int] = frozenset(range(3, 9))
    cfg_scale: float = 7.5
    sample_steps: int = 50
    injection_order: str = "content_first"
    content_attn_mode: str = "qk"      # "kv" is the degraded ablation variant
    content_attn: bool = True
    content_residual: bool = True
    style_attn: bool = True
    use_style_tokens: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        decoder = set(DECODER_IDS)
        if not set(self.attn_layers) <= decoder:
            raise ConfigurationError(
                f"attn_layers {sorted(self.attn_layers)} must be decoder layers {sorted(decoder)}")
        if not set(self.residual_layers) <= decoder:
            raise ConfigurationError(
                f"residual_layers {sorted(self.residual_layers)} must be decoder layers")
        if self.injection_order not in ORDERS:
            raise ConfigurationError(f"unknown injection order {self.injection_order!r}")
        if self.content_attn_mode not in CONTENT_ATTN_MODES:
            raise ConfigurationError(
                f"content_attn_mode must be one of {CONTENT_ATTN_MODES}")
        if self.sample_steps < 1:
            raise ConfigurationError("sample_steps must be >= 1")
        object.__setattr__(self, "attn_layers", frozenset(self.attn_layers))
        object.__setattr__(self, "residual_layers", frozenset(self.residual_layers))

    @property
    def t_alpha(self) -> int:
        return deciding_point(self.alpha, self.sample_steps)

    def with_alpha(self, alpha: float) -> "InjectionConfig":
        return replace(self, alpha=alpha)


@dataclass
class FeatureBank:
    """Per-step, per-layer branch features: residual increments and q/k/v."""

    branch: str
    steps: tuple[int, ...]
    store: dict[tuple[int, int], dict[str, torch.Tensor]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.branch not in ("content", "style"):
            raise ConfigurationError(f"bank branch must be content or style, got {self.branch!r}")

    def __contains__(self, t: int) -> bool:
        return t in self.steps

    def entry(self, t: int, layer: int) -> dict[str, torch.Tensor]:
        if t not in self.steps:
            raise BankError(f"step {t} absent from {self.branch} bank (steps {self.steps})")
        key = (t, layer)
        if key not in self.store:
            raise BankError(f"layer {layer} missing from {self.branch} bank at step {t}")
        return self.store[key]

    def insert(self, t: int, layer: int, features: dict[str, torch.Tensor]) -> None:
        if t not in self.steps:
            raise BankError(f"step {t} outside declared bank range {self.steps}")
        self.store[(t, layer)] = features

    def merge(self, other: "FeatureBank") -> "FeatureBank":
        if other.branch != self.branch:
            raise ConfigurationError("cannot merge banks of different branches")
        merged = FeatureBank(self.branch, tuple(sorted({*self.steps, *other.steps})))
        merged.store = {**self.store, **other.store}
        return merged

    # ---- debugging dump in the raw-tensor format ----

    def save(self, directory) -> None:
        tensors: dict[str, torch.Tensor] = {}
        for (t, layer), feats in sorted(self.store.items()):
            for name, tensor in feats.items():
                tensors[f"t{t:04d}.l{layer:02d}.{name}"] = tensor
        meta = {"branch": self.branch, "timesteps": list(self.steps)}
        tensorio.save_tensors(directory, "feature_bank", meta, tensors)

    @classmethod
    def load(cls, directory) -> "FeatureBank":
        manifest, tensors = tensorio.load_tensors(directory)
        meta = manifest["meta"]
        bank = cls(branch=meta["branch"], steps=tuple(meta["timesteps"]))
        for key, tensor in tensors.items():
            t_part, l_part, name = key.split(".", 2)
            bank.store.setdefault((int(t_part[1:]), int(l_part[1:])), {})[name] = tensor
        return bank


def capture_bank(branch: str, trajectory: LatentTrajectory, backend,
                 steps, cond: torch.Tensor, schedule: NoiseSchedule,
                 capture_layers: set[int] | None = None) -> FeatureBank:
    """Evaluate the backend at each inversion latent and store its decoder
    features.  One backend call per requested step; the per-step input is the
    trajectory's inversion latent, never a previously denoised output."""
    steps = tuple(steps)
    bank = FeatureBank(branch=branch, steps=steps)
    layers = set(capture_layers) if capture_layers is not None else set(DECODER_IDS)
    for t in steps:
        if t not in trajectory:
            raise BankError(f"trajectory for {branch} branch missing step {t}")
        z = trajectory[t]
        _, internals = backend.predict_noise(z.data, schedule.train_timestep(t), cond,
                                             capture=True)
        for lid in sorted(layers):
            rec = internals[lid]
            bank.insert(t, lid, {"residual": rec.residual_in, "q": rec.q,
                                 "k": rec.k, "v": rec.v})
    return bank


def content_directive(bank: FeatureBank, t: int, cfg: InjectionConfig) -> InjectionDirective:
    """Residual replacement at the residual layers plus q/k (or, in the
    ablation variant, k/v) attention override at the attention layers."""
    if bank.branch != "content":
        raise InjectionError(f"content directive needs a content bank, got {bank.branch!r}")
    residual: dict[int, torch.Tensor] = {}
    attn_qk: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}
    attn_kv: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}
    if cfg.content_residual:
        for lid in sorted(cfg.residual_layers):
            residual[lid] = bank.entry(t, lid)["residual"]
    if cfg.content_attn:
        for lid in sorted(cfg.attn_layers):
            feats = bank.entry(t, lid)
            if cfg.content_attn_mode == "qk":
                attn_qk[lid] = (feats["q"], feats["k"])
            else:
                attn_kv[lid] = (feats["k"], feats["v"])
    return InjectionDirective(residual=residual, attn_qk=attn_qk, attn_kv=attn_kv)


def style_directive(bank: FeatureBank, t: int, cfg: InjectionConfig,
                    mode: str = "kv") -> InjectionDirective:
    """K/V attention override from the style branch; defines no residual
    replacement, and q/k is not a valid style override kind."""
    if bank.branch != "style":
        raise InjectionError(f"style directive needs a style bank, got {bank.branch!r}")
    if mode != "kv":
        raise InjectionError(f"style injection replaces k,v only; {mode!r} is invalid")
    attn_kv: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}
    if cfg.style_attn:
        for lid in sorted(cfg.attn_layers):
            feats = bank.entry(t, lid)
            attn_kv[lid] = (feats["k"], feats["v"])
    return InjectionDirective(attn_kv=attn_kv)
