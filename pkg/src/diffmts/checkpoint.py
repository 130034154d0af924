"""Binary checkpoint container.

Layout (little-endian)::

    b"DMTS"  u16 version  u32 meta_len  meta_len bytes of UTF-8 JSON
    repeated meta["n_arrays"] times:
        u16 name_len  name  u8 dtype (0=f32, 1=f64)  u8 ndim  ndim x u32 dims  raw values

Arrays are stored under prefixed names: ``param/``, ``adam.m/``,
``adam.v/`` and ``stats/``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import FormatError, VersionError
from .model import ModelConfig
from .numcore import AdamState

MAGIC = b"DMTS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    schedule: dict
    params: dict
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    rng_state: dict | None = None
    stats: NormStats | None = None
    train_config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{k}": v for k, v in ckpt.params.items()}
    out.update({f"adam.m/{k}": v for k, v in ckpt.adam.m.items()})
    out.update({f"adam.v/{k}": v for k, v in ckpt.adam.v.items()})
    if ckpt.stats is not None:
        out["stats/lo"] = ckpt.stats.lo
        out["stats/hi"] = ckpt.stats.hi
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays = _arrays(ckpt)
    meta = {
        "model_config": ckpt.model_config.to_dict(),
        "schedule": ckpt.schedule,
        "adam_step": ckpt.adam.step,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "train_config": ckpt.train_config,
        "history": ckpt.history,
        "n_arrays": len(arrays),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated while reading {what} at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, source)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: bad magic at offset 0")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise VersionError(f"{source}: checkpoint version {version}, expected {VERSION}")
    (meta_len,) = r.unpack("<I", "metadata length")
    start = r.pos
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
        n_arrays = int(meta["n_arrays"])
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise FormatError(f"{source}: corrupt metadata at offset {start}: {exc}") from exc

    arrays = {}
    for _ in range(n_arrays):
        at = r.pos
        (name_len,) = r.unpack("<H", "array name length")
        name = r.take(name_len, "array name").decode("utf-8", errors="replace")
        code, ndim = r.unpack("<BB", f"header of {name!r}")
        if code not in _DTYPES:
            raise FormatError(f"{source}: unknown dtype code {code} for {name!r} at offset {at}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name!r}")
        dt = _DTYPES[code]
        count = int(np.prod(dims)) if ndim else 1
        raw = r.take(count * dt.itemsize, f"values of {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - r.pos} trailing bytes at offset {r.pos}")

    def group(prefix):
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    stats = None
    if "stats/lo" in arrays:
        stats = NormStats(arrays["stats/lo"], arrays["stats/hi"])
    try:
        cfg = ModelConfig(**meta["model_config"])
        return Checkpoint(
            model_config=cfg,
            schedule=meta["schedule"],
            params=group("param/"),
            adam=AdamState(group("adam.m/"), group("adam.v/"), int(meta["adam_step"])),
            epoch=int(meta["epoch"]),
            rng_state=meta.get("rng_state"),
            stats=stats,
            train_config=meta.get("train_config", {}),
            history=meta.get("history", []),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{source}: metadata missing field: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write atomically (temp file + rename); returns the sha256 of the bytes."""
    path = Path(path)
    buf = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(buf).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf, str(path))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
