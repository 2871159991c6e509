# api/app.py
from __future__ import annotations

import logging

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field
from starlette.middleware import Middleware
from starlette.middleware.cors import CORSMiddleware

from teg.checkpoint import load_checkpoint
from teg.config import ServeConfig
from teg.errors import ConfigError, ContractError
from teg.log import setup_logging
from teg.model import TeGConfig, TeGParams
from teg.packets import PacketEmitter
from teg.queue import PacketQueue
from teg.service import DeliveryWorker, DetectionHub

logger = logging.getLogger(__name__)


class SegmentIn(BaseModel):
    short: list[float]
    medium: list[float]
    long: list[float]
    timestamp_ms: int = Field(ge=0)
    feature_ms: float | None = Field(default=None, ge=0.0)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    serve_cfg: ServeConfig | None = None,
    params: TeGParams | None = None,
    model_cfg: TeGConfig | None = None,
    emitter: PacketEmitter | None = None,
) -> FastAPI:
    """
    Build the scorer service. Without explicit params the model is loaded
    from TEG_MODEL; without an emitter one is built from TEG_ENDPOINT_URL,
    and with neither packets stay queued (visible in /stats).
    """
    cfg = serve_cfg if serve_cfg is not None else ServeConfig.from_env()
    setup_logging(cfg.log_level)
    if params is None:
        if not cfg.model_path:
            raise ConfigError("TEG_MODEL must point at a .tegw checkpoint")
        model_cfg, params = load_checkpoint(cfg.model_path)
    if model_cfg is None:
        raise ConfigError("model_cfg is required together with params")
    if emitter is None and cfg.endpoint() is not None:
        emitter = PacketEmitter(cfg.endpoint())

    queue = PacketQueue(cfg.queue_cap)
    hub = DetectionHub(params, model_cfg, cfg, queue)
    worker = DeliveryWorker(queue, emitter) if emitter is not None else None

    middleware = [
        Middleware(
            CORSMiddleware,
            allow_origins=["*"],
            allow_credentials=False,
            allow_methods=["*"],
            allow_headers=["*"],
        )
    ]
    app = FastAPI(title="TeG anomaly scorer", middleware=middleware)
    app.state.hub = hub
    app.state.worker = worker

    @app.on_event("startup")
    async def _startup():
        if worker is not None:
            worker.start()
        logger.info("scorer ready dim=%d threshold=%.3f min_run=%d delivery=%s",
                    model_cfg.dim, cfg.threshold, cfg.min_run, "on" if worker else "off")

    @app.on_event("shutdown")
    async def _shutdown():
        if worker is not None:
            worker.stop()
            worker.drain()
            emitter.close()

    @app.post("/cameras/{camera_id}/segments")
    def push_segment(camera_id: str, segment: SegmentIn):
        if segment.feature_ms is not None:
            hub.meter.record_feature(segment.feature_ms)
        try:
            result = hub.push(camera_id, (segment.short, segment.medium, segment.long), segment.timestamp_ms)
        except ContractError as exc:
            return _error(422, str(exc))
        return {
            "camera_id": camera_id,
            "live_score": result.live_score,
            "scores": [float(s) for s in result.scores],
            "window": len(result.scores),
            "packets": [p.model_dump() for p in result.packets],
        }

    @app.post("/cameras/{camera_id}/flush")
    def flush(camera_id: str):
        try:
            packets = hub.flush(camera_id)
        except KeyError:
            return _error(404, f"unknown camera {camera_id}")
        return {"camera_id": camera_id, "packets": [p.model_dump() for p in packets]}

    @app.get("/health")
    def health():
        return {"status": "ok", "cameras": len(hub.cameras)}

    @app.get("/stats")
    def stats():
        out = hub.stats()
        out.update(worker.stats() if worker is not None else {"delivered": 0, "spooled": 0})
        return out

    @app.get("/latency")
    def latency():
        return {"samples": hub.meter.samples, **hub.meter.report(cfg.segment_ms).as_dict()}

    return app
