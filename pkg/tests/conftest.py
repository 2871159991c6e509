import numpy as np
import pytest
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from teg.data import SyntheticConfig, generate_synthetic_dataset
from teg.granularity import FeatureVolume
from teg.model import TeGConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TeGConfig(dim=8, heads=2, fcn_hidden=(16, 8))


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=7)


def random_volume(rng, segments=4, dim=8, video_id="v", scale=1.0):
    return FeatureVolume(video_id, *(scale * rng.normal(size=(segments, dim)) for _ in range(3)))


@pytest.fixture
def make_volume(rng):
    def _make(segments=4, dim=8, video_id="v", scale=1.0):
        return random_volume(rng, segments, dim, video_id, scale)
    return _make


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = SyntheticConfig(normal_videos=6, abnormal_videos=6, dim=8, frames=256, seed=3)
    return generate_synthetic_dataset(cfg)


class StubEndpoint:
    """Records posted packets; answers with the next queued status code (200 once exhausted)."""

    def __init__(self, statuses=()):
        self.statuses = list(statuses)
        self.requests: list[dict] = []
        self.app = FastAPI()

        @self.app.post("/packets")
        async def receive(request: Request):
            self.requests.append({
                "body": await request.body(),
                "authorization": request.headers.get("authorization"),
                "content_type": request.headers.get("content-type"),
            })
            status = self.statuses.pop(0) if self.statuses else 200
            return JSONResponse(status_code=status, content={"ok": status == 200})


@pytest.fixture
def stub_endpoint():
    return StubEndpoint
