"""Checkpoint persistence.

Binary layout, all little-endian:

    bytes 0-3   magic "RNTC"
    bytes 4-7   format version (uint32, currently 1)
    uint32 length-prefixed JSON header: model config, training step, ordered
        parameter manifest (name and shape), optimizer scalars if present,
        and the PRNG bit-generator state if present
    raw float64 parameter values in manifest order
    raw float64 Adam first-moment then second-moment values in the same
        order, when optimizer state is saved

Serialization is deterministic (sorted JSON keys, sorted parameter names), so
saving, loading, and saving again produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, TransducerModel
from .nn import AdamState, Array

MAGIC = b"RNTC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: TransducerModel
    opt: AdamState | None
    step: int
    rng: np.random.Generator | None


def save_checkpoint(
    path: str | Path,
    model: TransducerModel,
    opt: AdamState | None = None,
    step: int = 0,
    rng: np.random.Generator | None = None,
) -> Path:
    path = Path(path)
    names = sorted(model.params)
    header = {
        "config": asdict(model.config),
        "step": int(step),
        "params": [
            {"name": name, "shape": list(model.params[name].shape)} for name in names
        ],
        "optimizer": None
        if opt is None
        else {
            "step": int(opt.step),
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
        },
        "rng_state": None if rng is None else rng.bit_generator.state,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for name in names:
        blob += _array_bytes(model.params[name])
    if opt is not None:
        for table in (opt.m, opt.v):
            if set(table) != set(names):
                raise ValueError("optimizer state keys do not match parameters")
            for name in names:
                blob += _array_bytes(table[name])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(blob))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic): {path}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {version} (expected {FORMAT_VERSION}): {path}"
        )
    (header_len,) = struct.unpack_from("<I", data, 8)
    header_end = 12 + header_len
    if len(data) < header_end:
        raise ValueError(f"truncated checkpoint header: {path}")
    header = json.loads(data[12:header_end].decode("utf-8"))
    config = ModelConfig(**header["config"])
    offset = header_end
    params: dict[str, Array] = {}
    for entry in header["params"]:
        arr, offset = _read_array(data, offset, entry["shape"], path)
        params[entry["name"]] = arr
    model = TransducerModel(config, params)
    opt = None
    if header["optimizer"] is not None:
        moments: list[dict[str, Array]] = []
        for _ in range(2):
            table: dict[str, Array] = {}
            for entry in header["params"]:
                arr, offset = _read_array(data, offset, entry["shape"], path)
                table[entry["name"]] = arr
            moments.append(table)
        scalars = header["optimizer"]
        opt = AdamState(
            step=scalars["step"],
            m=moments[0],
            v=moments[1],
            lr=scalars["lr"],
            beta1=scalars["beta1"],
            beta2=scalars["beta2"],
            eps=scalars["eps"],
        )
    if offset != len(data):
        raise ValueError(
            f"checkpoint has {len(data) - offset} unexpected trailing bytes: {path}"
        )
    rng = None
    if header["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng_state"]
    return Checkpoint(model=model, opt=opt, step=header["step"], rng=rng)


def _array_bytes(arr: Array) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _read_array(
    data: bytes, offset: int, shape: list[int], path: Path
) -> tuple[Array, int]:
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    end = offset + 8 * count
    if end > len(data):
        raise ValueError(f"truncated checkpoint arrays: {path}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return values.reshape(shape).astype(np.float64), end
