"""Noise schedule: beta/alpha-bar tables and inference timestep spacing.

Sample-level timesteps run 0..T where 0 is the clean latent and 1..T are the
noise levels visited during T-step sampling.  Sample level t >= 1 maps to a
training timestep through ``timestep_map`` ("leading" spacing); level 0 is the
data boundary with alpha_bar == 1 exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

SPACINGS = ("linear", "scaled_linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta table, cumulative alpha products and the inference timestep map."""

    t_train: int
    betas: np.ndarray            # (t_train,), float64, values in (0, 1)
    alphas_cumprod: np.ndarray   # (t_train,), float64, strictly decreasing
    sample_steps: int            # T
    timestep_map: np.ndarray     # (T,), int64, strictly increasing in [0, t_train)

    def __post_init__(self) -> None:
        if self.betas.shape != (self.t_train,):
            raise ConfigurationError(
                f"betas must have length t_train={self.t_train}, got {self.betas.shape}")
        if not (np.all(self.betas > 0.0) and np.all(self.betas < 1.0)):
            raise ConfigurationError("betas must lie in (0, 1)")
        if self.alphas_cumprod.shape != (self.t_train,):
            raise ConfigurationError("alphas_cumprod must have length t_train")
        if not np.all(np.diff(self.alphas_cumprod) < 0.0):
            raise ConfigurationError("alphas_cumprod must be strictly decreasing")
        if not (np.all(self.alphas_cumprod > 0.0) and np.all(self.alphas_cumprod <= 1.0)):
            raise ConfigurationError("alphas_cumprod must lie in (0, 1]")
        if len(self.timestep_map) != self.sample_steps:
            raise ConfigurationError(
                f"timestep_map must have exactly {self.sample_steps} entries")
        if not np.all(np.diff(self.timestep_map) > 0):
            raise ConfigurationError("timestep_map must be strictly increasing")
        if self.timestep_map[0] < 0 or self.timestep_map[-1] >= self.t_train:
            raise ConfigurationError("timestep_map entries must lie in [0, t_train)")

    def alpha_bar(self, sample_t: int) -> float:
        """Cumulative alpha at sample level ``sample_t`` (0 = clean, value 1.0)."""
        if sample_t == 0:
            return 1.0
        if not 1 <= sample_t <= self.sample_steps:
            raise ConfigurationError(
                f"sample timestep {sample_t} outside [0, {self.sample_steps}]")
        return float(self.alphas_cumprod[self.timestep_map[sample_t - 1]])

    def train_timestep(self, sample_t: int) -> int:
        """Training timestep fed to the denoiser at sample level ``sample_t``."""
        if sample_t == 0:
            return 0
        if not 1 <= sample_t <= self.sample_steps:
            raise ConfigurationError(
                f"sample timestep {sample_t} outside [0, {self.sample_steps}]")
        return int(self.timestep_map[sample_t - 1])

    def digest(self) -> str:
        """Stable hash of the schedule, embedded in tensor-dump manifests."""
        h = hashlib.sha256()
        h.update(json.dumps({"t_train": self.t_train, "T": self.sample_steps}).encode())
        h.update(self.betas.astype("<f8").tobytes())
        h.update(self.timestep_map.astype("<i8").tobytes())
        return h.hexdigest()[:16]


def make_schedule(t_train: int, beta_start: float, beta_end: float,
                  sample_steps: int, spacing: str = "scaled_linear") -> NoiseSchedule:
    """Build a schedule with evenly spaced ("leading") inference timesteps."""
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if not 1 <= sample_steps <= t_train:
        raise ConfigurationError(
            f"need 1 <= sample_steps <= t_train, got T={sample_steps}, t_train={t_train}")
    if spacing == "linear":
        betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    elif spacing == "scaled_linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, t_train,
                            dtype=np.float64) ** 2
    else:
        raise ConfigurationError(f"unknown spacing {spacing!r}; use one of {SPACINGS}")
    alphas_cumprod = np.cumprod(1.0 - betas)
    stride = t_train // sample_steps
    timestep_map = np.arange(sample_steps, dtype=np.int64) * stride
    return NoiseSchedule(t_train=t_train, betas=betas, alphas_cumprod=alphas_cumprod,
                         sample_steps=sample_steps, timestep_map=timestep_map)
