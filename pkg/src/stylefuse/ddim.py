"""Deterministic DDIM arithmetic: forward noising, reverse step, inversion step,
classifier-free guidance combination, and trajectory inversion.

All operations are pure functions of their inputs.  Latents are (C, H, W)
float32 tensors tagged with a sample-level timestep and a branch name.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import torch

from .errors import ConfigurationError, OrderingError, ShapeError
from .schedule import NoiseSchedule

BRANCHES = ("content", "style", "target")

# Signature the inversion loop expects from a denoiser backend:
# eps_fn(z, train_timestep, cond) -> eps tensor of z's shape.
EpsFn = Callable[[torch.Tensor, int, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class Latent:
    """A latent tensor tagged with its sample-level timestep and branch."""

    data: torch.Tensor
    step: int
    branch: str

    def __post_init__(self) -> None:
        if self.branch not in BRANCHES:
            raise ConfigurationError(f"unknown branch {self.branch!r}")
        if not torch.isfinite(self.data).all():
            raise ConfigurationError(
                f"latent at step {self.step} ({self.branch}) has non-finite entries")


class LatentTrajectory:
    """Immutable ordered map sample-timestep -> Latent for one branch."""

    def __init__(self, branch: str, latents: Mapping[int, Latent]):
        if branch not in BRANCHES:
            raise ConfigurationError(f"unknown branch {branch!r}")
        for t, lat in latents.items():
            if lat.branch != branch:
                raise ConfigurationError(
                    f"latent at step {t} carries branch {lat.branch!r}, expected {branch!r}")
            if lat.step != t:
                raise ConfigurationError(
                    f"latent keyed {t} carries step tag {lat.step}")
        self.branch = branch
        self._latents = dict(sorted(latents.items()))

    def __len__(self) -> int:
        return len(self._latents)

    def __contains__(self, t: int) -> bool:
        return t in self._latents

    def __getitem__(self, t: int) -> Latent:
        return self._latents[t]

    def timesteps(self) -> list[int]:
        return list(self._latents)


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} vs {tuple(b.shape)} differ")


def add_noise(z0: Latent, eps: torch.Tensor, t: int, s: NoiseSchedule) -> Latent:
    """Forward noising: sqrt(a_bar)*z0 + sqrt(1-a_bar)*eps at sample level t."""
    _check_shapes(z0.data, eps, "add_noise")
    a = s.alpha_bar(t)
    data = math.sqrt(a) * z0.data + math.sqrt(1.0 - a) * eps
    return Latent(data=data, step=t, branch=z0.branch)


def ddim_step(z_t: Latent, eps_pred: torch.Tensor, t: int, t_prev: int,
              s: NoiseSchedule) -> Latent:
    """Deterministic reverse update from level t to t_prev (eta = 0)."""
    if t_prev >= t:
        raise OrderingError(f"ddim_step needs t_prev < t, got {t_prev} >= {t}")
    _check_shapes(z_t.data, eps_pred, "ddim_step")
    a_t = s.alpha_bar(t)
    a_p = s.alpha_bar(t_prev)
    z0_hat = (z_t.data - math.sqrt(1.0 - a_t) * eps_pred) / math.sqrt(a_t)
    data = math.sqrt(a_p) * z0_hat + math.sqrt(1.0 - a_p) * eps_pred
    return Latent(data=data, step=t_prev, branch=z_t.branch)


def ddim_invert_step(z_t: Latent, eps_pred: torch.Tensor, t: int, t_next: int,
                     s: NoiseSchedule) -> Latent:
    """Inversion update from level t to t_next > t: the exact algebraic
    inverse of :func:`ddim_step`, i.e. the ODE drift
    sqrt(1/a_next - 1) - sqrt(1/a - 1) expressed in unscaled variables:

        z_next = sqrt(a_next/a) * z + sqrt(a_next) * (sqrt(1/a_next - 1)
                 - sqrt(1/a - 1)) * eps
    """
    if t_next <= t:
        raise OrderingError(f"ddim_invert_step needs t_next > t, got {t_next} <= {t}")
    _check_shapes(z_t.data, eps_pred, "ddim_invert_step")
    a_t = s.alpha_bar(t)
    a_n = s.alpha_bar(t_next)
    scale = math.sqrt(a_n / a_t)
    drift = math.sqrt(1.0 - a_n) - scale * math.sqrt(1.0 - a_t)
    return Latent(data=scale * z_t.data + drift * eps_pred, step=t_next,
                  branch=z_t.branch)


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor,
                scale: float) -> torch.Tensor:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    _check_shapes(eps_uncond, eps_cond, "cfg_combine")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def invert_trajectory(z0: Latent, t_lo: int, t_hi: int, eps_fn: EpsFn,
                      cond: torch.Tensor, s: NoiseSchedule) -> LatentTrajectory:
    """Invert the clean latent z0 up through levels [t_lo, t_hi].

    The first update is a single (possibly coarse) inversion step 0 -> t_lo;
    subsequent levels are reached one step at a time.  The backend is evaluated
    once per produced latent, at the current latent and its current level,
    so the call count is exactly t_hi - t_lo + 1.  An inverted range
    (t_lo > t_hi) yields an empty trajectory with no backend calls.
    """
    if t_lo > t_hi:
        return LatentTrajectory(z0.branch, {})
    if not 1 <= t_lo <= t_hi <= s.sample_steps:
        raise ConfigurationError(
            f"inversion range [{t_lo}, {t_hi}] outside [1, {s.sample_steps}]")
    out: dict[int, Latent] = {}
    z = z0
    cur = 0
    for nxt in [t_lo, *range(t_lo + 1, t_hi + 1)]:
        eps = eps_fn(z.data, s.train_timestep(cur), cond)
        z = ddim_invert_step(z, eps, cur, nxt, s)
        out[nxt] = z
        cur = nxt
    return LatentTrajectory(z0.branch, out)
