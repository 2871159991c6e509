# src/teg/queue.py
import logging
import threading
from collections import deque

from .packets import AnomalyPacket

logger = logging.getLogger(__name__)


class PacketQueue:
    """FIFO acotada entre detección y envío; si está llena descarta el más antiguo."""
    def __init__(self, cap: int = 256):
        if cap < 1:
            raise ValueError(f"queue capacity must be >= 1, got {cap}")
        self.packets: deque[AnomalyPacket] = deque()
        self.cap = cap
        self.dropped = 0
        self._cond = threading.Condition()

    def offer(self, packet: AnomalyPacket) -> bool:
        """Enqueue; returns False when an older packet had to be dropped to make room."""
        with self._cond:
            evicted = False
            if len(self.packets) >= self.cap:
                old = self.packets.popleft()
                self.dropped += 1
                evicted = True
                logger.warning("queue full, dropped packet camera=%s start_ms=%d dropped_total=%d",
                               old.camera_id, old.start_ms, self.dropped)
            self.packets.append(packet)
            self._cond.notify()
            return not evicted

    def poll(self, timeout: float | None = None) -> AnomalyPacket | None:
        """Oldest packet, waiting up to `timeout` seconds (None waits forever, 0 never waits)."""
        with self._cond:
            if not self.packets and timeout != 0:
                self._cond.wait_for(lambda: bool(self.packets), timeout)
            return self.packets.popleft() if self.packets else None

    def drain(self) -> list[AnomalyPacket]:
        with self._cond:
            out = list(self.packets)
            self.packets.clear()
            return out

    def available(self) -> int:
        with self._cond:
            return len(self.packets)
