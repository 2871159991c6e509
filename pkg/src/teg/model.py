# src/teg/model.py
"""
Red de fusión TeG: 3 bloques MCA (SM, ML, SL) y un MSA sobre [F_S | F_M | F_L],
proyección residual a 3D y FCN de 3 capas por segmento.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .granularity import FeatureVolume
from .tensor import (
    Tensor,
    concat_cols,
    dropout,
    layer_norm_rows,
    relu,
    sigmoid,
    slice_cols,
    softmax_rows,
)

# query granularity first: shorter scales query longer-scale context
MCA_BLOCKS = {"mca_sm": ("short", "medium"), "mca_ml": ("medium", "long"), "mca_sl": ("short", "long")}
MSA_BLOCK = "msa"

SegmentScores = np.ndarray


@dataclass(frozen=True)
class TeGConfig:
    dim: int
    heads: int = 4
    fcn_hidden: tuple[int, int] = (512, 128)
    dropout_rate: float = 0.0
    use_layer_norm: bool = True
    attention_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fcn_hidden", tuple(int(h) for h in self.fcn_hidden))
        self.validate()

    def validate(self) -> None:
        if self.dim < 1 or self.heads < 1:
            raise ConfigError(f"dim and heads must be positive, got dim={self.dim} heads={self.heads}")
        if self.dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide dim={self.dim}")
        if len(self.fcn_hidden) != 2 or min(self.fcn_hidden) < 1:
            raise ConfigError(f"fcn_hidden must be two positive sizes, got {self.fcn_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class TeGParams:
    """Named learnable tensors; iteration order is the creation order."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "TeGParams":
        return cls({k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})


@dataclass
class FusionIntermediates:
    f_sm: Tensor
    f_ml: Tensor
    f_sl: Tensor
    f_sml: Tensor
    f_res: Tensor
    f_sml_concat: Tensor
    x: Tensor
    attention: dict[str, list[np.ndarray]] = field(default_factory=dict)


class ForwardResult(NamedTuple):
    features: Tensor
    scores: Tensor
    intermediates: FusionIntermediates


def _attention_shapes(width: int) -> list[tuple[str, tuple[int, int]]]:
    return [(n, (width, width)) for n in ("query", "key", "value", "output")]


def init_params(config: TeGConfig, seed: int) -> TeGParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.dim
    h1, h2 = config.fcn_hidden
    params = TeGParams()

    def weight(name: str, shape: tuple[int, int]) -> None:
        bound = 1.0 / math.sqrt(shape[0])
        params.tensors[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

    def const(name: str, shape: tuple[int, int], value: float) -> None:
        params.tensors[name] = Tensor(np.full(shape, value), requires_grad=True, name=name)

    for block, width in [*((b, d) for b in MCA_BLOCKS), (MSA_BLOCK, 3 * d)]:
        for name, shape in _attention_shapes(width):
            weight(f"{block}.{name}", shape)
        if config.use_layer_norm:
            const(f"{block}.norm_gain", (1, width), 1.0)
            const(f"{block}.norm_bias", (1, width), 0.0)
    weight("residual.weight", (6 * d, 3 * d))
    weight("fcn.weight1", (3 * d, h1))
    const("fcn.bias1", (1, h1), 0.0)
    weight("fcn.weight2", (h1, h2))
    const("fcn.bias2", (1, h2), 0.0)
    weight("fcn.weight3", (h2, 1))
    const("fcn.bias3", (1, 1), 0.0)
    return params


def _attend(queries: Tensor, context: Tensor, block: str, params: TeGParams, config: TeGConfig) -> tuple[Tensor, list[np.ndarray]]:
    q = queries @ params[f"{block}.query"]
    k = context @ params[f"{block}.key"]
    v = context @ params[f"{block}.value"]
    hd = q.shape[1] // config.heads
    scale = 1.0 / math.sqrt(hd)
    outs, weights = [], []
    for h in range(config.heads):
        lo, hi = h * hd, (h + 1) * hd
        attn = softmax_rows((slice_cols(q, lo, hi) @ slice_cols(k, lo, hi).T) * scale)
        weights.append(attn.data)
        outs.append(attn @ slice_cols(v, lo, hi))
    out = concat_cols(outs) @ params[f"{block}.output"]
    if config.attention_residual:
        out = out + queries
    if config.use_layer_norm:
        out = layer_norm_rows(out, params[f"{block}.norm_gain"], params[f"{block}.norm_bias"])
    return out, weights


def mca_block(f_q: Tensor, f_kv: Tensor, params: TeGParams, config: TeGConfig, block: str = "mca_sm") -> Tensor:
    """Cross-attention: queries from `f_q`, keys/values from `f_kv`."""
    if f_q.shape != f_kv.shape or f_q.shape[1] != config.dim:
        raise ShapeError(f"{block}: query {f_q.shape} / context {f_kv.shape}, expected (N, {config.dim})")
    return _attend(f_q, f_kv, block, params, config)[0]


def msa_block(f_cat: Tensor, params: TeGParams, config: TeGConfig) -> Tensor:
    if f_cat.data.ndim != 2 or f_cat.shape[1] != 3 * config.dim:
        raise ShapeError(f"msa: input {f_cat.shape}, expected (N, {3 * config.dim})")
    return _attend(f_cat, f_cat, MSA_BLOCK, params, config)[0]


def fuse(volume: FeatureVolume, params: TeGParams, config: TeGConfig) -> tuple[Tensor, FusionIntermediates]:
    if volume.dim != config.dim:
        raise ShapeError(f"volume {volume.video_id} has D={volume.dim}, model expects D={config.dim}")
    inputs = {name: Tensor(m) for name, m in zip(("short", "medium", "long"), volume.matrices)}
    attention: dict[str, list[np.ndarray]] = {}
    fused = {}
    for block, (qn, kn) in MCA_BLOCKS.items():
        fused[block], attention[block] = _attend(inputs[qn], inputs[kn], block, params, config)
    f_concat = concat_cols([inputs["short"], inputs["medium"], inputs["long"]])
    f_sml, attention[MSA_BLOCK] = _attend(f_concat, f_concat, MSA_BLOCK, params, config)
    f_res = concat_cols([fused["mca_sm"], fused["mca_ml"], fused["mca_sl"], f_sml])
    x = f_res @ params["residual.weight"] + f_concat
    return x, FusionIntermediates(
        f_sm=fused["mca_sm"], f_ml=fused["mca_ml"], f_sl=fused["mca_sl"],
        f_sml=f_sml, f_res=f_res, f_sml_concat=f_concat, x=x, attention=attention,
    )


def classify(
    x: Tensor,
    params: TeGParams,
    config: TeGConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Row-wise MLP 3D -> h1 -> h2 -> 1 with sigmoid output; returns an (N, 1) column."""
    if x.data.ndim != 2 or x.shape[1] != 3 * config.dim:
        raise ShapeError(f"classify: input {x.shape}, expected (N, {3 * config.dim})")
    drop = training and config.dropout_rate > 0.0
    if drop and rng is None:
        raise ConfigError("dropout during training needs an rng")
    h = relu(x @ params["fcn.weight1"] + params["fcn.bias1"])
    if drop:
        h = dropout(h, config.dropout_rate, rng)
    h = relu(h @ params["fcn.weight2"] + params["fcn.bias2"])
    if drop:
        h = dropout(h, config.dropout_rate, rng)
    return sigmoid(h @ params["fcn.weight3"] + params["fcn.bias3"])


def forward(
    volume: FeatureVolume,
    params: TeGParams,
    config: TeGConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    x, inter = fuse(volume, params, config)
    return ForwardResult(x, classify(x, params, config, training, rng), inter)


def predict(volume: FeatureVolume, params: TeGParams, config: TeGConfig) -> SegmentScores:
    """Segment scores as a flat float array (inference, no dropout)."""
    return forward(volume, params, config).scores.data[:, 0].copy()
