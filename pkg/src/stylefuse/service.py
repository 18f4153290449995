"""HTTP job service: submit transfer jobs, poll progress, fetch results.

Jobs run on an in-process worker pool; each executes against its own isolated
engine.  Results are persisted to a content-addressed output directory, so a
restart loses the queue but keeps finished images.
"""
from __future__ import annotations

import hashlib
import io
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import HTMLResponse, Response
from PIL import Image

from .codec import ImageAsset
from .errors import StyleFuseError
from .injection import InjectionConfig
from .pipeline import Engine, TransferJob, run_style_transfer
from .unet import DECODER_IDS, ENCODER_IDS

STATES = ("queued", "running", "done", "failed")
_TRANSITIONS = {"queued": {"running"}, "running": {"done", "failed"},
                "done": set(), "failed": set()}


@dataclass
class JobRecord:
    id: str
    state: str = "queued"
    progress_step: int = 0
    progress_total: int = 0
    params: dict = field(default_factory=dict)
    result_path: str | None = None
    error: str | None = None

    def to_public(self) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "progress": {"step": self.progress_step, "total": self.progress_total},
            "params": self.params,
            "result_path": self.result_path,
            "error": self.error,
        }


class JobStore:
    """Linearizable snapshots of job records behind a single lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[str, JobRecord] = {}

    def create(self, params: dict, total: int) -> JobRecord:
        rec = JobRecord(id=uuid.uuid4().hex[:12], params=params, progress_total=total)
        with self._lock:
            self._records[rec.id] = rec
        return rec

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            rec = self._records.get(job_id)
            return JobRecord(**asdict(rec)) if rec else None

    def transition(self, job_id: str, state: str, **fields) -> None:
        with self._lock:
            rec = self._records[job_id]
            if state != rec.state and state not in _TRANSITIONS[rec.state]:
                raise RuntimeError(f"illegal transition {rec.state} -> {state}")
            rec.state = state
            for k, v in fields.items():
                setattr(rec, k, v)

    def set_progress(self, job_id: str, step: int) -> None:
        with self._lock:
            rec = self._records[job_id]
            rec.progress_step = max(rec.progress_step, step)


def _decode_upload(data: bytes, role: str) -> ImageAsset:
    import numpy as np
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype="float32") / 255.0
    return ImageAsset(torch.from_numpy(arr).permute(2, 0, 1).contiguous(), role)


def _parse_params(raw: str | None) -> dict:
    if not raw:
        return {}
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise HTTPException(422, f"params is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise HTTPException(422, "params must be a JSON object")
    return doc


def _config_from_params(params: dict) -> tuple[InjectionConfig, dict]:
    from .cli import parse_layer_set
    known = {"alpha", "steps", "cfg_scale", "attn_layers", "residual_layers",
             "order", "content_attn_mode", "content_prompt", "edit_prompt", "seed"}
    unknown = set(params) - known
    if unknown:
        raise HTTPException(422, f"unknown params: {sorted(unknown)}")
    try:
        cfg = InjectionConfig(
            alpha=float(params.get("alpha", 0.2)),
            sample_steps=int(params.get("steps", 50)),
            cfg_scale=float(params.get("cfg_scale", 7.5)),
            attn_layers=(parse_layer_set(str(params["attn_layers"]))
                         if "attn_layers" in params else frozenset(range(4, 12))),
            residual_layers=(parse_layer_set(str(params["residual_layers"]))
                             if "residual_layers" in params else frozenset(range(3, 9))),
            injection_order=params.get("order", "content_first"),
            content_attn_mode=params.get("content_attn_mode", "qk"),
        )
    except (StyleFuseError, ValueError) as exc:
        raise HTTPException(422, f"invalid params: {exc}") from exc
    extras = {
        "content_prompt": str(params.get("content_prompt", "")),
        "edit_prompt": params.get("edit_prompt"),
        "seed": int(params.get("seed", 0)),
    }
    return cfg, extras


def create_app(max_workers: int = 1, output_dir: str | Path = "stylefuse_results",
               ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="stylefuse", version="0.1.0")
    from fastapi.middleware.cors import CORSMiddleware
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    store = JobStore()
    pool = ThreadPoolExecutor(max_workers=max(1, max_workers))
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    def execute(job_id: str, transfer_job: TransferJob) -> None:
        store.transition(job_id, "running")
        try:
            engine = Engine.toy(seed=transfer_job.seed,
                                sample_steps=transfer_job.config.sample_steps)
            result = run_style_transfer(
                transfer_job, engine,
                progress_cb=lambda done, total: store.set_progress(job_id, done))
            arr = (result.output.pixels.clamp(0, 1) * 255).round().to(torch.uint8)
            buf = io.BytesIO()
            Image.fromarray(arr.permute(1, 2, 0).numpy(), "RGB").save(buf, format="PNG")
            payload = buf.getvalue()
            name = hashlib.sha256(payload).hexdigest()[:16] + ".png"
            path = outdir / name
            path.write_bytes(payload)
            store.transition(job_id, "done", result_path=str(path))
        except Exception as exc:  # job isolation: any failure lands in the record
            store.transition(job_id, "failed", error=str(exc))

    @app.post("/jobs", status_code=201)
    async def submit(content: UploadFile = File(...), style: UploadFile = File(...),
                     params: str | None = Form(None)):
        cfg, extras = _config_from_params(_parse_params(params))
        try:
            content_img = _decode_upload(await content.read(), "content")
            style_img = _decode_upload(await style.read(), "style")
        except Exception as exc:
            raise HTTPException(422, f"bad image upload: {exc}") from exc
        job = TransferJob(content=content_img, style=style_img, config=cfg,
                          content_prompt=extras["content_prompt"],
                          edit_prompt=extras["edit_prompt"], seed=extras["seed"])
        rec = store.create(params={"alpha": cfg.alpha, "steps": cfg.sample_steps,
                                   "cfg_scale": cfg.cfg_scale,
                                   "attn_layers": sorted(cfg.attn_layers),
                                   "residual_layers": sorted(cfg.residual_layers),
                                   "order": cfg.injection_order,
                                   "content_attn_mode": cfg.content_attn_mode,
                                   **extras},
                           total=cfg.sample_steps)
        pool.submit(execute, rec.id, job)
        return rec.to_public()

    @app.get("/jobs/{job_id}")
    def poll(job_id: str):
        rec = store.get(job_id)
        if rec is None:
            raise HTTPException(404, "unknown job id")
        return rec.to_public()

    @app.get("/jobs/{job_id}/result")
    def fetch(job_id: str):
        rec = store.get(job_id)
        if rec is None:
            raise HTTPException(404, "unknown job id")
        if rec.state != "done":
            raise HTTPException(409, f"job is {rec.state}, result not available")
        data = Path(rec.result_path).read_bytes()
        return Response(content=data, media_type="image/png")

    @app.get("/meta")
    def meta():
        return {
            "layers": {
                "decoder": sorted(DECODER_IDS),
                "encoder": sorted(ENCODER_IDS),
            },
            "defaults": {
                "alpha": 0.2,
                "attn_layers": sorted(range(4, 12)),
                "residual_layers": sorted(range(3, 9)),
                "steps": 50,
                "cfg_scale": 7.5,
                "order": "content_first",
            },
            "alpha_range": [0.0, 1.0],
            "version": "0.1.0",
        }

    @app.get("/", response_class=HTMLResponse)
    def index():
        page = Path(__file__).with_name("static_index.html")
        if page.exists():
            return page.read_text()
        return "<html><body><p>stylefuse API. See /docs.</p></body></html>"

    return app
