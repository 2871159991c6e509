"""Analytic gradients of the full objective against central differences."""
import numpy as np

from teg.gradcheck import check_gradients
from teg.granularity import FeatureVolume
from teg.loss import LossConfig, total_loss
from teg.model import TeGConfig, forward, init_params
from teg.tensor import backward, mean, row_norms


def _volume(rng, video_id, shift=0.0):
    return FeatureVolume(video_id, *(rng.normal(size=(4, 8)) + shift for _ in range(3)))


def test_total_loss_gradients_match_finite_differences(rng):
    cfg = TeGConfig(dim=8, heads=2, fcn_hidden=(16, 8))
    params = init_params(cfg, seed=21)
    pos, neg = _volume(rng, "a", shift=0.5), _volume(rng, "n")
    loss_cfg = LossConfig(k=3)

    def loss():
        return total_loss([forward(pos, params, cfg)], [forward(neg, params, cfg)], loss_cfg)[0]

    result = check_gradients(loss, params.parameters())
    assert result.ok(1e-4), f"worst={list(params)[result.worst_param]} {result}"
    assert result.checked == sum(p.data.size for p in params.parameters())


def test_every_parameter_group_receives_gradient(rng, tiny_config, tiny_params):
    vol = _volume(rng, "v")
    out = forward(vol, tiny_params, tiny_config)
    grads = backward(mean(row_norms(out.features)) + mean(out.scores), tiny_params.parameters())
    for name, g in zip(tiny_params, grads):
        assert np.any(g != 0.0), name


def test_gradients_without_norm_or_residual(rng):
    cfg = TeGConfig(dim=4, heads=2, fcn_hidden=(6, 4), use_layer_norm=False, attention_residual=False)
    params = init_params(cfg, seed=4)
    pos = FeatureVolume("a", *(rng.normal(size=(3, 4)) for _ in range(3)))
    neg = FeatureVolume("n", *(rng.normal(size=(3, 4)) for _ in range(3)))

    def loss():
        return total_loss([forward(pos, params, cfg)], [forward(neg, params, cfg)], LossConfig(k=2))[0]

    assert check_gradients(loss, params.parameters()).ok(1e-4)
