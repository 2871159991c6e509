# src/teg/packets.py
"""Paquetes de anomalía y su envío: POST JSON con bearer, reintentos con backoff y spool."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import httpx
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DeliveryError
from .utils import write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_ANOMALY_TYPE = "anomaly"


class AnomalyPacket(BaseModel):
    """Wire format; field order is fixed and is the serialization order."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    anomaly_type: str = Field(min_length=1)
    start_ms: int = Field(ge=0)
    end_ms: int = Field(ge=0)
    camera_id: str = Field(min_length=1)
    peak_score: float = Field(ge=0.0, le=1.0)
    clip_ref: str

    @model_validator(mode="after")
    def _ordered_span(self) -> "AnomalyPacket":
        if self.start_ms > self.end_ms:
            raise ValueError(f"start_ms {self.start_ms} after end_ms {self.end_ms}")
        return self

    def to_json(self) -> str:
        return self.model_dump_json()


def clip_ref(camera_id: str, start_ms: int, end_ms: int) -> str:
    return f"clip://{camera_id}/{start_ms}-{end_ms}"


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    token: str | None = None
    max_attempts: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 5.0
    spool_path: str = "spool.jsonl"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            parsed = httpx.URL(self.url)
        except (httpx.InvalidURL, TypeError) as exc:
            raise DeliveryError(f"malformed endpoint URL {self.url!r}: {exc}") from exc
        if parsed.scheme not in ("http", "https") or not parsed.host:
            raise DeliveryError(f"endpoint URL must be http(s)://host/..., got {self.url!r}")
        if self.max_attempts < 1:
            raise DeliveryError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_s < 0 or self.timeout_s <= 0:
            raise DeliveryError("backoff_s must be >= 0 and timeout_s > 0")

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers


@dataclass(frozen=True)
class DeliveryResult:
    delivered: bool
    attempts: int
    status_code: int | None = None
    error: str | None = None

    @property
    def spooled(self) -> bool:
        return not self.delivered


class PacketEmitter:
    """Posts packets to one endpoint. `client` and `sleep` are injectable for tests."""

    def __init__(
        self,
        config: EndpointConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._owns_client = client is None
        self.client = client if client is not None else httpx.Client(timeout=config.timeout_s)
        self.sleep = sleep
        self.delivered = 0
        self.spooled = 0

    def close(self) -> None:
        if self._owns_client:
            self.client.close()

    def __enter__(self) -> "PacketEmitter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _spool(self, packet: AnomalyPacket, result: DeliveryResult) -> None:
        row = {
            "packet": packet.model_dump(),
            "attempts": result.attempts,
            "status_code": result.status_code,
            "error": result.error,
        }
        write_jsonl(self.config.spool_path, [row], append=True)
        self.spooled += 1
        logger.error("packet spooled camera=%s start_ms=%d attempts=%d error=%s spool=%s",
                     packet.camera_id, packet.start_ms, result.attempts, result.error, self.config.spool_path)

    def emit(self, packet: AnomalyPacket) -> DeliveryResult:
        cfg = self.config
        body = packet.to_json()
        status: int | None = None
        error: str | None = None
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                resp = self.client.post(cfg.url, content=body, headers=cfg.headers(), timeout=cfg.timeout_s)
                status = resp.status_code
                if 200 <= status < 300:
                    self.delivered += 1
                    logger.info("packet delivered camera=%s start_ms=%d end_ms=%d peak=%.4f attempts=%d",
                                packet.camera_id, packet.start_ms, packet.end_ms, packet.peak_score, attempt)
                    return DeliveryResult(True, attempt, status)
                error = f"HTTP {status}"
            except httpx.HTTPError as exc:
                status, error = None, f"{type(exc).__name__}: {exc}"
            if attempt < cfg.max_attempts:
                delay = cfg.backoff_s * 2 ** (attempt - 1)
                logger.warning("delivery retry camera=%s attempt=%d error=%s backoff_s=%.3f",
                               packet.camera_id, attempt, error, delay)
                self.sleep(delay)
        result = DeliveryResult(False, cfg.max_attempts, status, error)
        self._spool(packet, result)
        return result


def emit_packet(
    packet: AnomalyPacket,
    config: EndpointConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> DeliveryResult:
    with PacketEmitter(config, client, sleep) as emitter:
        return emitter.emit(packet)
