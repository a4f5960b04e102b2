"""HTTP API for interactive segmentation.

One worker thread executes jobs from a bounded FIFO queue; clients poll
job status and fetch the labeling, energy, bound, and min-marginal map
when done.  Images travel as base64 binary PPM, seed masks and result
maps as base64 binary PGM.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import queue
import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles

from .core import PatternBank
from .pipeline import (
    MAX_GRID_SIDE,
    InferenceSettings,
    build_segmentation_model,
    check_grid_size,
    labeling_to_bytes_image,
    min_marginal_map,
    run_pipeline,
)
from .pnm import PnmError, decode_pgm, decode_ppm, encode_pgm
from .tasks import SeedMask, TaskError

DEFAULT_QUEUE_DEPTH = 8
MAX_PASSES = 2000


@dataclass
class Job:
    """One queued segmentation request and its visible progress."""

    id: str
    image: np.ndarray
    mask: SeedMask
    prior_weight: float
    passes: object
    status: str = "queued"
    pass_count: int = 0
    lower_bound: float | None = None
    result: dict | None = None
    error: str | None = None
    cancel: threading.Event = field(default_factory=threading.Event)


class _ServerState:
    def __init__(self, bank: PatternBank, queue_depth: int):
        self.bank = bank
        self.queue_depth = queue_depth
        self.jobs: dict[str, Job] = {}
        self.queue: queue.Queue = queue.Queue()
        self.lock = threading.Lock()
        self.worker: threading.Thread | None = None


def _bad_request(message: str):
    raise HTTPException(status_code=400, detail=message)


def _decode_b64(payload: dict, key: str) -> bytes:
    value = payload.get(key)
    if not isinstance(value, str):
        _bad_request(f"field {key!r} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        _bad_request(f"field {key!r} is not valid base64")


def _parse_job(payload: dict) -> tuple[np.ndarray, SeedMask, float, object]:
    if not isinstance(payload, dict):
        _bad_request("body must be a JSON object")
    try:
        raw_image = decode_ppm(_decode_b64(payload, "image"))
        mask = SeedMask(decode_pgm(_decode_b64(payload, "strokes")))
    except (PnmError, TaskError) as exc:
        _bad_request(str(exc))
    h, w = raw_image.shape[:2]
    if mask.dims != (w, h):
        _bad_request(
            f"strokes dims {mask.dims} do not match image {(w, h)}"
        )
    try:
        check_grid_size((w, h))
    except TaskError:
        _bad_request(f"image exceeds {MAX_GRID_SIDE} pixels per side")
    if not mask.foreground.any() or not mask.background.any():
        _bad_request("strokes must mark both foreground and background")
    prior_weight = payload.get("lambda", 1.0)
    if (isinstance(prior_weight, bool)
            or not isinstance(prior_weight, (int, float))
            or not prior_weight > 0):
        _bad_request("field 'lambda' must be a positive number")
    passes = payload.get("passes", 300)
    if passes != "auto":
        if (isinstance(passes, bool) or not isinstance(passes, int)
                or not 1 <= passes <= MAX_PASSES):
            _bad_request(
                f"field 'passes' must be 'auto' or 1..{MAX_PASSES}"
            )
    return raw_image.astype(np.float64) / 255.0, mask, float(prior_weight), passes


def _execute(state: _ServerState, job: Job) -> None:
    def progress(done: int, bound: float) -> bool:
        job.pass_count = done
        job.lower_bound = float(bound)
        return not job.cancel.is_set()

    model, _, _ = build_segmentation_model(
        state.bank, job.image, job.mask, job.prior_weight
    )
    result = run_pipeline(model, InferenceSettings(passes=job.passes),
                          progress=progress)
    if job.cancel.is_set():
        job.status = "cancelled"
        return
    job.result = {
        "labeling": base64.b64encode(
            encode_pgm(labeling_to_bytes_image(result.labeling))
        ).decode("ascii"),
        "energy": result.energy,
        "lower_bound": result.lower_bound,
        "min_marginal_map": base64.b64encode(
            encode_pgm(min_marginal_map(result.min_marginals))
        ).decode("ascii"),
    }
    job.status = "done"


def _worker_loop(state: _ServerState) -> None:
    while True:
        job = state.queue.get()
        if job is None:
            return
        if job.cancel.is_set():
            job.status = "cancelled"
            continue
        job.status = "running"
        try:
            _execute(state, job)
        except Exception as exc:  # job failures must not kill the worker
            job.status = "failed"
            job.error = str(exc)


def create_app(bank: PatternBank, ui_dir: str | None = None,
               queue_depth: int = DEFAULT_QUEUE_DEPTH) -> FastAPI:
    state = _ServerState(bank, queue_depth)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.worker = threading.Thread(
            target=_worker_loop, args=(state,), daemon=True
        )
        state.worker.start()
        yield
        state.queue.put(None)
        state.worker.join(timeout=5.0)

    app = FastAPI(title="curvemrf", lifespan=lifespan)

    def _get_job(job_id: str) -> Job:
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404,
                                detail=f"no job {job_id!r}")
        return job

    @app.post("/jobs", status_code=202)
    def submit_job(payload: dict):
        image, mask, prior_weight, passes = _parse_job(payload)
        with state.lock:
            queued = sum(
                1 for j in state.jobs.values() if j.status == "queued"
            )
            if queued >= state.queue_depth:
                raise HTTPException(status_code=429,
                                    detail="job queue is full")
            job = Job(id=uuid.uuid4().hex, image=image, mask=mask,
                      prior_weight=prior_weight, passes=passes)
            state.jobs[job.id] = job
            state.queue.put(job)
        return {"id": job.id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = _get_job(job_id)
        body = {
            "status": job.status,
            "pass": job.pass_count,
            "lower_bound": job.lower_bound,
        }
        if job.error is not None:
            body["error"] = job.error
        return body

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        job = _get_job(job_id)
        if job.status != "done":
            raise HTTPException(
                status_code=409,
                detail=f"job is {job.status}, not done",
            )
        return job.result

    @app.delete("/jobs/{job_id}")
    def cancel_job(job_id: str):
        job = _get_job(job_id)
        if job.status in ("done", "failed", "cancelled"):
            raise HTTPException(
                status_code=409,
                detail=f"job already {job.status}",
            )
        job.cancel.set()
        if job.status == "queued":
            job.status = "cancelled"
        return {"id": job.id, "status": job.status}

    @app.get("/bank")
    def get_bank():
        return json.loads(state.bank.to_json())

    if ui_dir is not None and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
