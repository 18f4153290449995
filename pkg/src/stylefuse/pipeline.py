"""End-to-end style transfer: encode, condition, invert branches, run the
injected target branch, decode; plus the editing/translation entry points and
the alpha sweep with shared branch inversions.

Per-step flow mirrors the separated-injection scheme: the target branch
starts from the content image's top inversion latent; at each step the
required branch features are captured from that branch's inversion latent and
consumed immediately, so feature memory stays bounded to one step.
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

from .codec import ImageAsset, LatentCodec, decode, encode
from .conditioning import ConditioningBundle, StubStyleEncoder, StubTextEncoder, build_bundle
from .ddim import Latent, LatentTrajectory, cfg_combine, ddim_step, invert_trajectory
from .errors import ConfigurationError, PipelineError
from .injection import (FeatureBank, InjectionConfig, capture_bank, content_directive,
                        select_injection, style_directive)
from .schedule import NoiseSchedule, make_schedule
from .unet import ToyUNet, ToyUNetConfig

EVAL_KEYS = ("content_invert", "style_invert", "content_capture", "style_capture",
             "target")


class _CountingBackend:
    """Wraps a backend so every evaluation increments a purpose-tagged counter."""

    def __init__(self, backend, counters: dict[str, int], key: str):
        self._backend = backend
        self._counters = counters
        self._key = key

    def predict_noise(self, *args, **kwargs):
        self._counters[self._key] += 1
        return self._backend.predict_noise(*args, **kwargs)


@dataclass
class Engine:
    """Bundle of model components a transfer run executes against."""

    schedule: NoiseSchedule
    backend: ToyUNet
    codec: LatentCodec
    text_encoder: StubTextEncoder
    style_encoder: StubStyleEncoder
    counters: dict[str, int] = field(default_factory=lambda: {k: 0 for k in EVAL_KEYS})

    @classmethod
    def toy(cls, seed: int = 0, sample_steps: int = 50, codec_downscale: int = 1,
            unet_config: ToyUNetConfig | None = None) -> "Engine":
        codec = LatentCodec(downscale_factor=codec_downscale,
                            latent_channels=3 * codec_downscale ** 2, seed=seed)
        cfg = unet_config or ToyUNetConfig(latent_channels=codec.latent_channels,
                                           seed=seed)
        if cfg.latent_channels != codec.latent_channels:
            raise ConfigurationError("unet latent_channels must match codec")
        # mild beta range: the untrained backend is only approximately
        # self-consistent under inversion, so deep-noise schedules accumulate
        # recomputation drift that a trained model would not show
        return cls(
            schedule=make_schedule(1000, 1e-4, 2e-3, sample_steps, "linear"),
            backend=ToyUNet(cfg),
            codec=codec,
            text_encoder=StubTextEncoder(dim=cfg.text_dim, seed=seed),
            style_encoder=StubStyleEncoder(dim=cfg.text_dim, seed=seed),
        )

    def counted(self, key: str) -> _CountingBackend:
        return _CountingBackend(self.backend, self.counters, key)

    def eps_fn(self, key: str):
        counted = self.counted(key)
        return lambda z, t, cond: counted.predict_noise(z, t, cond)[0]

    def snapshot_counters(self) -> dict[str, int]:
        return dict(self.counters)


@dataclass(frozen=True)
class TransferJob:
    content: ImageAsset
    style: ImageAsset
    config: InjectionConfig = InjectionConfig()
    content_prompt: str = ""
    edit_prompt: str | None = None
    seed: int = 0
    keep_banks: bool = False
    keep_latents: bool = False


@dataclass
class TransferResult:
    output: ImageAsset
    trace: list[dict]
    meta: dict
    banks: dict[str, FeatureBank] | None = None
    latents: list[Latent] | None = None

    def trace_document(self) -> dict:
        return {"meta": self.meta, "steps": self.trace}


@contextmanager
def _stage(name: str, step: int | None = None):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        where = f"{name}, step {step}" if step is not None else name
        raise PipelineError(f"{where}: {exc}") from exc


def _partition_steps(cfg: InjectionConfig) -> tuple[list[int], list[int]]:
    t_alpha = cfg.t_alpha
    content = [t for t in range(1, cfg.sample_steps + 1)
               if select_injection(t, t_alpha, cfg.injection_order) == "content"]
    style = [t for t in range(1, cfg.sample_steps + 1)
             if select_injection(t, t_alpha, cfg.injection_order) == "style"]
    return content, style


def run_style_transfer(job: TransferJob, engine: Engine | None = None,
                       content_traj: LatentTrajectory | None = None,
                       style_traj: LatentTrajectory | None = None,
                       progress_cb=None) -> TransferResult:
    """Run the full transfer for one job; see module docstring for the flow."""
    cfg = job.config
    eng = engine or Engine.toy(seed=job.seed, sample_steps=cfg.sample_steps)
    s = eng.schedule
    if s.sample_steps != cfg.sample_steps:
        raise ConfigurationError(
            f"engine schedule has T={s.sample_steps}, config wants {cfg.sample_steps}")
    T = cfg.sample_steps
    counters_before = eng.snapshot_counters()
    started = time.perf_counter()

    with _stage("conditioning"):
        bundle: ConditioningBundle = build_bundle(
            job.content_prompt, job.style, job.edit_prompt,
            text_encoder=eng.text_encoder, style_encoder=eng.style_encoder,
            use_style_tokens=cfg.use_style_tokens)
    null_cond = bundle.null_embedding.tokens

    with _stage("encode"):
        z_c0 = encode(job.content, eng.codec)

    content_steps, style_steps = _partition_steps(cfg)

    if content_traj is None:
        with _stage("invert_content"):
            c_lo = min(content_steps) if content_steps else T
            content_traj = invert_trajectory(z_c0, c_lo, T,
                                             eng.eps_fn("content_invert"), null_cond, s)
    if style_traj is None and style_steps:
        with _stage("invert_style"):
            z_s0 = encode(job.style, eng.codec)
            style_traj = invert_trajectory(z_s0, min(style_steps), max(style_steps),
                                           eng.eps_fn("style_invert"), null_cond, s)

    z_hat = Latent(data=content_traj[T].data.clone(), step=T, branch="target")
    target_backend = eng.counted("target")
    trace: list[dict] = []
    latents: list[Latent] | None = [z_hat] if job.keep_latents else None
    kept_banks: dict[str, FeatureBank] = {}

    for t in range(T, 0, -1):
        step_start = time.perf_counter()
        mode = select_injection(t, cfg.t_alpha, cfg.injection_order)
        with _stage("capture", t):
            if mode == "content":
                bank = capture_bank("content", content_traj, eng.counted("content_capture"),
                                    (t,), null_cond, s)
                directive = content_directive(bank, t, cfg)
            else:
                bank = capture_bank("style", style_traj, eng.counted("style_capture"),
                                    (t,), null_cond, s)
                directive = style_directive(bank, t, cfg)
            if job.keep_banks:
                kept_banks[mode] = bank if mode not in kept_banks \
                    else kept_banks[mode].merge(bank)
        with _stage("target", t):
            train_t = s.train_timestep(t)
            eps_cond, _ = target_backend.predict_noise(z_hat.data, train_t,
                                                       bundle.v_st, directives=directive)
            if cfg.cfg_scale != 1.0:
                eps_uncond, _ = target_backend.predict_noise(z_hat.data, train_t,
                                                             null_cond,
                                                             directives=directive)
                eps = cfg_combine(eps_uncond, eps_cond, cfg.cfg_scale)
            else:
                eps = eps_cond
            z_hat = ddim_step(z_hat, eps, t, t - 1, s)
        if latents is not None:
            latents.append(z_hat)
        trace.append({
            "t": t,
            "mode": mode,
            "injected": directive.kinds(),
            "attn_layers": sorted(set(directive.attn_qk) | set(directive.attn_kv)),
            "residual_layers": sorted(directive.residual),
            "duration_ms": round(1e3 * (time.perf_counter() - step_start), 3),
        })
        if progress_cb is not None:
            progress_cb(T - t + 1, T)

    with _stage("decode"):
        output = decode(z_hat, eng.codec, role="output")

    counters_after = eng.snapshot_counters()
    meta = {
        "t_alpha": cfg.t_alpha,
        "alpha": cfg.alpha,
        "sample_steps": T,
        "cfg_scale": cfg.cfg_scale,
        "injection_order": cfg.injection_order,
        "content_attn_mode": cfg.content_attn_mode,
        "cond_tokens": int(bundle.v_st.shape[0]),
        "style_tokens": int(bundle.v_s.tokens.shape[0]),
        "seed": job.seed,
        "backend_evals": {k: counters_after[k] - counters_before[k] for k in EVAL_KEYS},
        "duration_s": round(time.perf_counter() - started, 3),
    }
    return TransferResult(output=output, trace=trace, meta=meta,
                          banks=kept_banks if job.keep_banks else None,
                          latents=latents)


def run_edit(job: TransferJob, engine: Engine | None = None, **kwargs) -> TransferResult:
    """Same pipeline with the content embedding swapped for the edit prompt."""
    if not job.edit_prompt:
        raise ConfigurationError("run_edit requires a nonempty edit_prompt")
    return run_style_transfer(job, engine, **kwargs)


def run_translation(content_img: ImageAsset, reference_img: ImageAsset,
                    config: InjectionConfig, engine: Engine | None = None,
                    seed: int = 0, **kwargs) -> TransferResult:
    """Image-to-image translation: the reference image rides in the style slot."""
    job = TransferJob(content=ImageAsset(content_img.pixels, "content"),
                      style=ImageAsset(reference_img.pixels, "style"),
                      config=config, seed=seed)
    return run_style_transfer(job, engine, **kwargs)


def sweep_alpha(job: TransferJob, alphas: list[float],
                engine: Engine | None = None) -> list[TransferResult]:
    """One run per alpha, sharing branch inversions across the sweep."""
    if not alphas:
        return []
    configs = [job.config.with_alpha(a) for a in alphas]
    eng = engine or Engine.toy(seed=job.seed, sample_steps=job.config.sample_steps)
    s = eng.schedule
    T = job.config.sample_steps

    # widest ranges any alpha in the sweep needs
    content_lo = T
    style_hi = 0
    for cfg in configs:
        c_steps, s_steps = _partition_steps(cfg)
        content_lo = min(content_lo, min(c_steps) if c_steps else T)
        style_hi = max(style_hi, max(s_steps) if s_steps else 0)

    null_cond = eng.text_encoder("").tokens
    content_traj = invert_trajectory(encode(job.content, eng.codec), content_lo, T,
                                     eng.eps_fn("content_invert"), null_cond, s)
    style_traj = None
    if style_hi >= 1:
        style_traj = invert_trajectory(encode(job.style, eng.codec), 1, style_hi,
                                       eng.eps_fn("style_invert"), null_cond, s)

    results = []
    for cfg in configs:
        swept = replace(job, config=cfg)
        results.append(run_style_transfer(swept, eng, content_traj=content_traj,
                                          style_traj=style_traj))
    return results
