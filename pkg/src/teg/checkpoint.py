# src/teg/checkpoint.py
"""
TEGW checkpoint layout (all integers u32 little-endian):

    "TEGW" | version | dim | heads | n_hidden | hidden... | dropout f64 |
    use_layer_norm u8 | attention_residual u8 | n_params |
    per param: name_len | name utf-8 | rank | dims... | float64 LE row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .codec import ByteReader
from .model import TeGConfig, TeGParams

MAGIC = b"TEGW"
VERSION = 1


def encode_checkpoint(params: TeGParams, config: TeGConfig) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<IIII", VERSION, config.dim, config.heads, len(config.fcn_hidden))
    out += struct.pack(f"<{len(config.fcn_hidden)}I", *config.fcn_hidden)
    out += struct.pack("<dBB", config.dropout_rate, int(config.use_layer_norm), int(config.attention_residual))
    out += struct.pack("<I", len(params))
    for name in params:
        arr = params[name].data
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(out)


def decode_checkpoint(data: bytes) -> tuple[TeGConfig, TeGParams]:
    r = ByteReader(data, "TEGW checkpoint")
    r.expect_magic(MAGIC)
    r.expect_version(VERSION)
    dim, heads, n_hidden = r.unpack("III")
    hidden = r.unpack(f"{n_hidden}I")
    dropout_rate, use_ln, residual = r.unpack("dBB")
    config = TeGConfig(dim=dim, heads=heads, fcn_hidden=hidden, dropout_rate=dropout_rate,
                       use_layer_norm=bool(use_ln), attention_residual=bool(residual))
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = r.unpack(f"{rank}I")
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = r.array(count, "<f8").astype(np.float64).reshape(shape)
    return config, TeGParams.from_arrays(arrays)


def save_checkpoint(path: str | os.PathLike, params: TeGParams, config: TeGConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(params, config))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[TeGConfig, TeGParams]:
    return decode_checkpoint(Path(path).read_bytes())
