# src/teg/config.py
"""Run presets for the CLI and environment-driven settings for the scorer service."""
from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError
from .packets import DEFAULT_ANOMALY_TYPE, EndpointConfig

# Flags override presets; presets override library defaults.
# lambda_fm 1e-4 keeps the m=100 magnitude hinge below the BCE term.
PRESETS: dict[str, dict] = {
    "desk": {
        "epochs": 200,
        "lambda_fm": 1e-4,
        "dim": 16,
        "fcn_hidden": (512, 128),
        "normal_videos": 100,
        "abnormal_videos": 100,
        "test_normal_videos": 25,
        "test_abnormal_videos": 25,
        "frames": 2048,
    },
    "paper": {
        "epochs": 1000,
        "lambda_fm": 1e-4,
        "dim": 1024,
        "fcn_hidden": (512, 128),
        "normal_videos": 100,
        "abnormal_videos": 100,
        "test_normal_videos": 25,
        "test_abnormal_videos": 25,
        "frames": 2048,
    },
}
DEFAULT_PRESET = "desk"


def preset(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class ServeConfig:
    model_path: str | None = None
    endpoint_url: str | None = None
    endpoint_token: str | None = None
    threshold: float = 0.5
    min_run: int = 1
    segment_ms: int = 2133
    queue_cap: int = 256
    spool_path: str = "spool.jsonl"
    max_attempts: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 5.0
    anomaly_type: str = DEFAULT_ANOMALY_TYPE
    log_level: str = "info"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.min_run < 1:
            raise ConfigError(f"min_run must be >= 1, got {self.min_run}")
        if self.segment_ms <= 0:
            raise ConfigError(f"segment_ms must be positive, got {self.segment_ms}")
        if self.queue_cap < 1:
            raise ConfigError(f"queue_cap must be >= 1, got {self.queue_cap}")

    @classmethod
    def from_env(cls, environ: dict | None = None) -> "ServeConfig":
        env = os.environ if environ is None else environ
        try:
            return cls(
                model_path=env.get("TEG_MODEL") or None,
                endpoint_url=env.get("TEG_ENDPOINT_URL") or None,
                endpoint_token=env.get("TEG_ENDPOINT_TOKEN") or None,
                threshold=float(env.get("TEG_THRESHOLD", "0.5")),
                min_run=int(env.get("TEG_MIN_RUN", "1")),
                segment_ms=int(env.get("TEG_SEGMENT_MS", "2133")),
                queue_cap=int(env.get("TEG_QUEUE_CAP", "256")),
                spool_path=env.get("TEG_SPOOL", "spool.jsonl"),
                max_attempts=int(env.get("TEG_MAX_ATTEMPTS", "3")),
                backoff_s=float(env.get("TEG_BACKOFF_S", "0.5")),
                timeout_s=float(env.get("TEG_TIMEOUT_S", "5.0")),
                anomaly_type=env.get("TEG_ANOMALY_TYPE", DEFAULT_ANOMALY_TYPE),
                log_level=env.get("TEG_LOG_LEVEL", "info"),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad TEG_* environment value: {exc}") from exc

    def endpoint(self) -> EndpointConfig | None:
        """Delivery settings, or None when no endpoint is configured (packets stay queued)."""
        if not self.endpoint_url:
            return None
        return EndpointConfig(
            url=self.endpoint_url,
            token=self.endpoint_token,
            max_attempts=self.max_attempts,
            backoff_s=self.backoff_s,
            timeout_s=self.timeout_s,
            spool_path=self.spool_path,
        )
