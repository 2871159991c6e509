# src/teg/service.py
"""
Detection hub: one window and one run detector per camera, packets queued
for a delivery worker. Also the dataset replay used by `serve --replay`.
"""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ServeConfig
from .data import Dataset
from .granularity import segment_bounds
from .model import TeGConfig, TeGParams
from .packets import AnomalyPacket, PacketEmitter, clip_ref
from .queue import PacketQueue
from .stream import Event, LatencyMeter, StreamingDetector, StreamWindow, push_segment

logger = logging.getLogger(__name__)


@dataclass
class PushResult:
    camera_id: str
    scores: np.ndarray
    live_score: float
    packets: list[AnomalyPacket] = field(default_factory=list)


@dataclass
class _Camera:
    window: StreamWindow
    detector: StreamingDetector
    lock: threading.Lock = field(default_factory=threading.Lock)


class DetectionHub:
    """Thread-safe; cameras are independent, created on first push and scored under their own lock."""

    def __init__(
        self,
        params: TeGParams,
        model_cfg: TeGConfig,
        serve_cfg: ServeConfig,
        queue: PacketQueue | None = None,
        meter: LatencyMeter | None = None,
    ):
        self.params = params
        self.model_cfg = model_cfg
        self.serve_cfg = serve_cfg
        self.queue = queue if queue is not None else PacketQueue(serve_cfg.queue_cap)
        self.meter = meter if meter is not None else LatencyMeter()
        self._cameras: dict[str, _Camera] = {}
        self.emitted = 0
        # registry, counters and meter only; never held across a forward pass
        self._lock = threading.Lock()

    @property
    def cameras(self) -> list[str]:
        with self._lock:
            return sorted(self._cameras)

    def _camera(self, camera_id: str) -> _Camera:
        with self._lock:
            cam = self._cameras.get(camera_id)
            if cam is None:
                cam = _Camera(StreamWindow(camera_id),
                              StreamingDetector(self.serve_cfg.threshold, self.serve_cfg.min_run))
                self._cameras[camera_id] = cam
                logger.info("camera registered camera=%s", camera_id)
            return cam

    def _packet(self, camera_id: str, event: Event) -> AnomalyPacket:
        end_ms = event.end_ms + self.serve_cfg.segment_ms
        packet = AnomalyPacket(
            anomaly_type=self.serve_cfg.anomaly_type,
            start_ms=event.start_ms,
            end_ms=end_ms,
            camera_id=camera_id,
            peak_score=event.peak,
            clip_ref=clip_ref(camera_id, event.start_ms, end_ms),
        )
        self.queue.offer(packet)
        with self._lock:
            self.emitted += 1
        logger.info("anomaly event camera=%s segments=%d-%d start_ms=%d end_ms=%d peak=%.4f",
                    camera_id, event.start, event.end, packet.start_ms, packet.end_ms, packet.peak_score)
        return packet

    def push(self, camera_id: str, triple: Sequence, timestamp_ms: int) -> PushResult:
        """Score one new segment; the newest row's score drives event detection."""
        cam = self._camera(camera_id)
        with cam.lock:
            t0 = time.perf_counter()
            scores = push_segment(cam.window, triple, timestamp_ms, self.params, self.model_cfg)
            elapsed = (time.perf_counter() - t0) * 1000.0
            with self._lock:
                self.meter.record_fusion(elapsed)
            live = float(scores[-1])
            result = PushResult(camera_id, scores, live)
            event = cam.detector.feed(live, int(timestamp_ms))
            if event is not None:
                result.packets.append(self._packet(camera_id, event))
            return result

    def flush(self, camera_id: str) -> list[AnomalyPacket]:
        """Close an open run on `camera_id`; KeyError for cameras never seen."""
        with self._lock:
            cam = self._cameras.get(camera_id)
        if cam is None:
            raise KeyError(camera_id)
        with cam.lock:
            event = cam.detector.flush()
            return [self._packet(camera_id, event)] if event is not None else []

    def stats(self) -> dict:
        with self._lock:
            cameras, events = len(self._cameras), self.emitted
        return {
            "cameras": cameras,
            "events": events,
            "queued": self.queue.available(),
            "dropped": self.queue.dropped,
        }


class DeliveryWorker(threading.Thread):
    """Moves packets from the queue to the emitter until stopped."""

    def __init__(self, queue: PacketQueue, emitter: PacketEmitter, poll_s: float = 0.2):
        super().__init__(name="teg-delivery", daemon=True)
        self.queue = queue
        self.emitter = emitter
        self.poll_s = poll_s
        self._stop_event = threading.Event()

    def run(self) -> None:
        while not self._stop_event.is_set():
            packet = self.queue.poll(self.poll_s)
            if packet is not None:
                self.emitter.emit(packet)

    def drain(self) -> int:
        """Deliver everything currently queued on the calling thread."""
        n = 0
        for packet in self.queue.drain():
            self.emitter.emit(packet)
            n += 1
        return n

    def stop(self, timeout: float | None = 5.0) -> None:
        self._stop_event.set()
        if self.is_alive():
            self.join(timeout)

    def stats(self) -> dict:
        return {"delivered": self.emitter.delivered, "spooled": self.emitter.spooled}


@dataclass
class ReplayResult:
    packets: list[AnomalyPacket] = field(default_factory=list)
    live_scores: dict[str, list[float]] = field(default_factory=dict)


def replay_dataset(
    dataset: Dataset,
    hub: DetectionHub,
    fps: float = 30.0,
    start_ms: int = 0,
    worker: DeliveryWorker | None = None,
) -> ReplayResult:
    """
    Stream every video as its own camera, segment by segment. Segment
    timestamps come from frame positions at `fps`. Queued packets are
    delivered synchronously after each video when a worker is given.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    result = ReplayResult()
    for rec in dataset.records:
        label = dataset.label(rec)
        vol = rec.volume
        bounds = segment_bounds(label.frames, vol.segments)
        live = result.live_scores.setdefault(rec.video_id, [])
        for i, (a, _) in enumerate(bounds):
            ts = start_ms + int(round(a * 1000.0 / fps))
            pushed = hub.push(rec.video_id, (vol.short[i], vol.medium[i], vol.long[i]), ts)
            live.append(pushed.live_score)
            result.packets.extend(pushed.packets)
        result.packets.extend(hub.flush(rec.video_id))
        if worker is not None:
            worker.drain()
    logger.info("replay done videos=%d packets=%d", len(dataset), len(result.packets))
    return result
