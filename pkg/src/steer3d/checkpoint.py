"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"S3CK"  u32 version
    u32 len + utf-8 preset name
    u32 len + utf-8 JSON model config
    u32 len + utf-8 JSON metadata (seed, epoch, ...)
    u32 n_params, then per parameter:
        u32 len + utf-8 name, u32 ndim, u32 dims..., f64 values (C order)
    u8 has_optimizer; if 1:
        u64 step, f64 beta1, f64 beta2, f64 eps,
        per parameter (same order): f64 first moment, f64 second moment
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .nn import ModelConfig, SteeringModel
from .training import OptimizerState

MAGIC = b"S3CK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _put_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _put_array(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def checkpoint_bytes(model: SteeringModel, opt: OptimizerState | None = None, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _put_str(buf, model.preset)
    _put_str(buf, json.dumps(model.config.to_dict(), sort_keys=True))
    _put_str(buf, json.dumps(meta or {}, sort_keys=True))
    params = model.named_params()
    buf.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        _put_str(buf, name)
        buf.write(struct.pack("<I", p.value.ndim))
        buf.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        _put_array(buf, p.value)
    if opt is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(struct.pack("<Qddd", opt.step, opt.beta1, opt.beta2, opt.eps))
        for name, p in params.items():
            _put_array(buf, opt.m.get(name, np.zeros_like(p.value)))
            _put_array(buf, opt.v.get(name, np.zeros_like(p.value)))
    return buf.getvalue()


def save_checkpoint(path: str | Path, model: SteeringModel, opt: OptimizerState | None = None,
                    meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, opt, meta))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)


def load_checkpoint(path: str | Path) -> tuple[SteeringModel, OptimizerState | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    preset = r.string()
    config = ModelConfig.from_dict(json.loads(r.string()))
    meta = json.loads(r.string())
    model = SteeringModel(config, preset=preset)
    expected = model.named_params()
    (n,) = r.unpack("<I")
    if n != len(expected):
        raise CheckpointError(f"{path}: {n} parameters, model expects {len(expected)}")
    values = {}
    for _ in range(n):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name}")
        values[name] = r.array(shape)
    model.restore(values)
    opt = None
    if r.take(1) == b"\x01":
        step, b1, b2, eps = r.unpack("<Qddd")
        opt = OptimizerState(beta1=b1, beta2=b2, eps=eps, step=step)
        for name, p in expected.items():
            opt.m[name] = r.array(p.shape).copy()
            opt.v[name] = r.array(p.shape).copy()
    return model, opt, meta
