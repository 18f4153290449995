"""Command-line front end: transfer, alpha sweeps, ablation toggles, inversion
debugging, metrics reports, and the HTTP service.

Exit codes: 0 success, 2 invalid flags/config, 3 IO failure, 4 pipeline error.
Config precedence: explicit flags > JSON config file > built-in defaults.
"""
from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
from PIL import Image

from . import tensorio
from .codec import ImageAsset, encode, load_png, save_png
from .ddim import invert_trajectory
from .errors import ConfigurationError, PipelineError, StyleFuseError
from .injection import InjectionConfig
from .metrics import content_loss, pixel_mse, style_loss, write_report
from .pipeline import Engine, TransferJob, run_style_transfer, sweep_alpha

CONFIG_VERSION = 1
DEFAULTS = {
    "alpha": 0.2,
    "steps": 50,
    "cfg_scale": 7.5,
    "attn_layers": "4-11",
    "residual_layers": "3-8",
    "order": "content_first",
    "content_attn_mode": "qk",
    "content_prompt": "",
    "edit_prompt": None,
    "seed": 0,
    "codec_downscale": 1,
}


def parse_layer_set(spec: str) -> frozenset[int]:
    """Parse "4-11" / "3,5,7" / "3-5,9" into a layer id set."""
    out: set[int] = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return frozenset(out)


def format_layer_set(layers: frozenset[int]) -> str:
    return ",".join(str(i) for i in sorted(layers))


def _merge_settings(cli_values: dict, config_path: str | None) -> dict:
    merged = dict(DEFAULTS)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise click.ClickException(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file is not valid JSON: {exc}") from exc
        if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise click.UsageError(f"unsupported config version {doc.get('version')}")
        for key in DEFAULTS:
            if key in doc:
                merged[key] = doc[key]
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _build_config(settings: dict, **overrides) -> InjectionConfig:
    kwargs = {
        "alpha": float(settings["alpha"]),
        "sample_steps": int(settings["steps"]),
        "cfg_scale": float(settings["cfg_scale"]),
        "attn_layers": parse_layer_set(str(settings["attn_layers"])),
        "residual_layers": parse_layer_set(str(settings["residual_layers"])),
        "injection_order": settings["order"],
        "content_attn_mode": settings["content_attn_mode"],
    }
    kwargs.update(overrides)
    try:
        return InjectionConfig(**kwargs)
    except (ConfigurationError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


def _load_images(content_path: str, style_path: str, resize: int | None,
                 ) -> tuple[ImageAsset, ImageAsset]:
    def load(path: str, role: str) -> ImageAsset:
        img = load_png(path, role)
        if resize:
            pil = Image.fromarray(
                (img.pixels.permute(1, 2, 0).numpy() * 255).astype("uint8"))
            pil = pil.resize((resize, resize), Image.BILINEAR)
            import numpy as np
            import torch
            arr = torch.from_numpy(np.asarray(pil, dtype="float32") / 255.0)
            return ImageAsset(arr.permute(2, 0, 1).contiguous(), role)
        return img

    try:
        return load(content_path, "content"), load(style_path, "style")
    except OSError as exc:
        click.echo(f"IO error: {exc}", err=True)
        sys.exit(3)


def _run_guarded(fn):
    try:
        return fn()
    except PipelineError as exc:
        click.echo(f"pipeline error: {exc}", err=True)
        sys.exit(4)
    except OSError as exc:
        click.echo(f"IO error: {exc}", err=True)
        sys.exit(3)


def _write_result(result, outdir: Path, stem: str = "output") -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    png_path = outdir / f"{stem}.png"
    save_png(result.output, png_path)
    (outdir / f"{stem}_trace.json").write_text(
        json.dumps(result.trace_document(), indent=2))
    return png_path


common_options = [
    click.option("--alpha", type=float, default=None, help="Injection proportion in [0,1] (default 0.2)."),
    click.option("--steps", type=int, default=None, help="Sampling steps T (default 50)."),
    click.option("--cfg-scale", type=float, default=None, help="Guidance scale (default 7.5)."),
    click.option("--attn-layers", default=None, help="Attention injection layers (default 4-11)."),
    click.option("--residual-layers", default=None, help="Residual injection layers (default 3-8)."),
    click.option("--content-prompt", default=None, help="Optional content prompt (default empty)."),
    click.option("--edit-prompt", default=None, help="Replacement prompt for text-based editing."),
    click.option("--seed", type=int, default=None, help="Seed for toy components (default 0)."),
    click.option("--codec-downscale", type=int, default=None, help="Latent downscale factor (default 1)."),
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config file; flags override it."),
    click.option("--resize", type=int, default=None, help="Resize inputs to NxN before encoding."),
    click.option("-o", "--outdir", type=click.Path(), default="stylefuse_out",
                 help="Output directory."),
]


def with_common_options(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Training-free diffusion style transfer with separated feature injection."""


def _settings_from_kwargs(kwargs: dict) -> dict:
    cli_values = {
        "alpha": kwargs.get("alpha"),
        "steps": kwargs.get("steps"),
        "cfg_scale": kwargs.get("cfg_scale"),
        "attn_layers": kwargs.get("attn_layers"),
        "residual_layers": kwargs.get("residual_layers"),
        "order": kwargs.get("order"),
        "content_prompt": kwargs.get("content_prompt"),
        "edit_prompt": kwargs.get("edit_prompt"),
        "seed": kwargs.get("seed"),
        "codec_downscale": kwargs.get("codec_downscale"),
    }
    return _merge_settings(cli_values, kwargs.get("config_path"))


def _prepare(content, style, kwargs, **config_overrides):
    settings = _settings_from_kwargs(kwargs)
    cfg = _build_config(settings, **config_overrides)
    content_img, style_img = _load_images(content, style, kwargs.get("resize"))
    engine = Engine.toy(seed=int(settings["seed"]), sample_steps=cfg.sample_steps,
                        codec_downscale=int(settings["codec_downscale"]))
    job = TransferJob(content=content_img, style=style_img, config=cfg,
                      content_prompt=str(settings["content_prompt"] or ""),
                      edit_prompt=settings["edit_prompt"],
                      seed=int(settings["seed"]))
    return job, engine, settings


def _replace_job(job: TransferJob, **fields) -> TransferJob:
    from dataclasses import replace
    return replace(job, **fields)


@main.command()
@click.argument("content", type=click.Path(exists=True, dir_okay=False))
@click.argument("style", type=click.Path(exists=True, dir_okay=False))
@with_common_options
@click.option("--dump-banks", is_flag=True, help="Write captured feature banks.")
@click.option("--dump-trajectory", is_flag=True, help="Write the content inversion trajectory.")
def transfer(content, style, dump_banks, dump_trajectory, **kwargs) -> None:
    """Stylize CONTENT with the artistic appearance of STYLE."""
    job, engine, settings = _prepare(content, style, kwargs)
    if dump_banks:
        job = _replace_job(job, keep_banks=True)
    outdir = Path(kwargs["outdir"])

    def go():
        result = run_style_transfer(job, engine)
        png = _write_result(result, outdir)
        if dump_banks and result.banks:
            for branch, bank in result.banks.items():
                bank.save(outdir / f"bank_{branch}")
        if dump_trajectory:
            _dump_content_trajectory(job, engine, outdir / "trajectory")
        click.echo(f"wrote {png}")
        click.echo(f"trace: {len(result.trace)} steps, "
                   f"{result.meta['backend_evals']}")
        return result

    _run_guarded(go)


def _dump_content_trajectory(job: TransferJob, engine: Engine, directory: Path) -> None:
    s = engine.schedule
    z0 = encode(job.content, engine.codec)
    null = engine.text_encoder("").tokens
    traj = invert_trajectory(z0, 1, s.sample_steps,
                             engine.eps_fn("content_invert"), null, s)
    tensors = {f"z{t:04d}": traj[t].data for t in traj.timesteps()}
    meta = {"branch": "content", "timesteps": traj.timesteps(),
            "schedule_hash": s.digest()}
    tensorio.save_tensors(directory, "trajectory", meta, tensors)


@main.command()
@click.argument("content", type=click.Path(exists=True, dir_okay=False))
@click.argument("style", type=click.Path(exists=True, dir_okay=False))
@with_common_options
@click.option("--alphas", default="0,0.2,0.4,0.6,0.8,1.0",
              help="Comma-separated alpha grid.")
def sweep(content, style, alphas, **kwargs) -> None:
    """Run an alpha ablation grid and write a side-by-side montage."""
    try:
        grid = [float(a) for a in alphas.split(",") if a.strip() != ""]
        if not grid:
            raise ValueError("empty alpha grid")
    except ValueError as exc:
        raise click.UsageError(f"bad --alphas: {exc}") from exc
    job, engine, settings = _prepare(content, style, kwargs)
    outdir = Path(kwargs["outdir"])

    def go():
        results = sweep_alpha(job, grid, engine)
        outdir.mkdir(parents=True, exist_ok=True)
        tiles = []
        for alpha, res in zip(grid, results):
            stem = f"alpha_{alpha:.2f}"
            _write_result(res, outdir, stem)
            tiles.append((alpha, res.output))
        montage_path = outdir / "montage.png"
        _write_montage(tiles, montage_path)
        click.echo(f"wrote {montage_path} and {len(results)} per-alpha outputs")
        click.echo(f"cache-stat: content inversion evals "
                   f"{engine.counters['content_invert']} (single shared pass)")
        return results

    _run_guarded(go)


def _write_montage(tiles, path: Path) -> None:
    import numpy as np
    strips = []
    for _, img in tiles:
        arr = (img.pixels.clamp(0, 1) * 255).to("cpu").numpy().astype("uint8")
        strips.append(arr.transpose(1, 2, 0))
    sep = 255 * np.ones((strips[0].shape[0], 4, 3), dtype="uint8")
    row = []
    for i, s in enumerate(strips):
        if i:
            row.append(sep)
        row.append(s)
    Image.fromarray(np.concatenate(row, axis=1)).save(path, format="PNG")


@main.command()
@click.argument("content", type=click.Path(exists=True, dir_okay=False))
@click.argument("style", type=click.Path(exists=True, dir_okay=False))
@with_common_options
@click.option("--no-content-attn", is_flag=True, help="Drop q/k replacement from content injection.")
@click.option("--no-content-residual", is_flag=True, help="Drop residual replacement from content injection.")
@click.option("--no-style", is_flag=True, help="Disable style-phase attention injection.")
@click.option("--no-blip-text", is_flag=True, help="Drop the style image's text-aligned tokens.")
@click.option("--order", type=click.Choice(["content_first", "style_first"]),
              default=None, help="Injection phase order.")
@click.option("--content-kv", is_flag=True,
              help="Content injection replaces k/v instead of q/k (degraded variant).")
def ablate(content, style, no_content_attn, no_content_residual, no_style,
           no_blip_text, order, content_kv, **kwargs) -> None:
    """Run a degraded pipeline variant for ablation comparisons."""
    overrides = {
        "content_attn": not no_content_attn,
        "content_residual": not no_content_residual,
        "style_attn": not no_style,
        "use_style_tokens": not no_blip_text,
    }
    if content_kv:
        overrides["content_attn_mode"] = "kv"
    job, engine, settings = _prepare(content, style, {**kwargs, "order": order},
                                     **overrides)
    cfg = job.config
    outdir = Path(kwargs["outdir"])

    def go():
        result = run_style_transfer(job, engine)
        png = _write_result(result, outdir, "ablation")
        modes = {
            "content_attn": cfg.content_attn, "content_residual": cfg.content_residual,
            "style_attn": cfg.style_attn, "style_tokens": cfg.use_style_tokens,
            "order": cfg.injection_order, "content_attn_mode": cfg.content_attn_mode,
        }
        click.echo(f"wrote {png}")
        click.echo(f"ablation: {json.dumps(modes, sort_keys=True)}")
        return result

    _run_guarded(go)


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@with_common_options
@click.option("--t-lo", type=int, default=1, help="Lowest level to keep.")
@click.option("--t-hi", type=int, default=None, help="Highest level to keep (default T).")
def invert(image, t_lo, t_hi, **kwargs) -> None:
    """Invert IMAGE and dump the latent trajectory (debugging aid)."""
    settings = _settings_from_kwargs(kwargs)
    cfg = _build_config(settings)
    try:
        img = load_png(image, "content")
    except OSError as exc:
        click.echo(f"IO error: {exc}", err=True)
        sys.exit(3)
    engine = Engine.toy(seed=int(settings["seed"]), sample_steps=cfg.sample_steps,
                        codec_downscale=int(settings["codec_downscale"]))
    hi = t_hi if t_hi is not None else cfg.sample_steps
    outdir = Path(kwargs["outdir"])

    def go():
        s = engine.schedule
        z0 = encode(img, engine.codec)
        null = engine.text_encoder("").tokens
        traj = invert_trajectory(z0, t_lo, hi, engine.eps_fn("content_invert"),
                                 null, s)
        tensors = {f"z{t:04d}": traj[t].data for t in traj.timesteps()}
        meta = {"branch": "content", "timesteps": traj.timesteps(),
                "schedule_hash": s.digest()}
        tensorio.save_tensors(outdir / "trajectory", "trajectory", meta, tensors)
        click.echo(f"wrote {outdir / 'trajectory'} ({len(traj)} latents)")

    _run_guarded(go)


@main.command()
@click.option("--pair", "pairs", type=(str, str, str), multiple=True, required=True,
              metavar="CONTENT STYLE GENERATED",
              help="Image triple to score; repeatable.")
@click.option("-o", "--out", type=click.Path(), default="report.csv",
              help="CSV output path.")
def report(pairs, out) -> None:
    """Score generated images against their content/style sources."""
    rows = []
    for content_path, style_path, gen_path in pairs:
        try:
            c = load_png(content_path, "content")
            s = load_png(style_path, "style")
            g = load_png(gen_path, "output")
        except OSError as exc:
            click.echo(f"IO error: {exc}", err=True)
            sys.exit(3)
        t0 = time.perf_counter()
        try:
            rows.append({
                "content": content_path, "style": style_path, "generated": gen_path,
                "content_loss": round(content_loss(g, c), 6),
                "style_loss": round(style_loss(g, s), 6),
                "pixel_mse": round(pixel_mse(g, c), 6),
                "runtime_s": round(time.perf_counter() - t0, 4),
            })
        except StyleFuseError as exc:
            click.echo(f"metric error: {exc}", err=True)
            sys.exit(4)
    write_report(rows, out)
    click.echo(f"wrote {out} ({len(rows)} rows)")


@main.command()
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", type=int, default=8000, help="Bind port.")
@click.option("--workers", type=int, default=1, help="Transfer worker threads.")
@click.option("--output-dir", type=click.Path(), default="stylefuse_results",
              help="Persisted result directory.")
@click.option("--ui", "ui_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Static web client directory to mount at /ui.")
def serve(host, port, workers, output_dir, ui_dir) -> None:
    """Serve the HTTP job API (and optionally the browser client)."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(max_workers=workers, output_dir=output_dir, ui_dir=ui_dir),
                host=host, port=port)


if __name__ == "__main__":
    main()
