"""CDMF binary containers: teacher feature files and parameter checkpoints.

Feature file layout (little-endian)::

    b"CDMF" | version u32 | sample count u64 | M u32 | D_t u32 | f32 flag u32
    then ``count`` contiguous row-major blocks of M*D_t floats.

A sidecar ``<path>.idx`` text file maps ``sample_id<TAB>byte offset``.

Checkpoint layout::

    b"CDMF" | version u32 | meta length u32 | meta (UTF-8 key: value lines)
    | tensor count u32 | per tensor: name length u32, name, f32 flag u32,
      ndim u32, dims u64 * ndim, raw data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CDMF"
VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIQIII")


class ContainerError(IOError):
    """Malformed or incomplete CDMF container."""


class MissingSampleError(KeyError):
    """A sample id has no entry in a feature file index."""


def _dtype_flag(dtype) -> int:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return 1
    if dtype == np.float64:
        return 0
    raise ContainerError(f"unsupported dtype {dtype}")


def _flag_dtype(flag: int):
    if flag not in (0, 1):
        raise ContainerError(f"bad float flag {flag}")
    return np.dtype("<f4") if flag == 1 else np.dtype("<f8")


def index_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".idx")


def write_features(path, features: dict[str, np.ndarray], dtype=np.float32) -> None:
    """Write per-sample [M, D_t] feature blocks plus the sidecar index."""
    path = Path(path)
    if not features:
        raise ContainerError("no features to write")
    blocks = {sid: np.asarray(f) for sid, f in features.items()}
    shapes = {b.shape for b in blocks.values()}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise ContainerError(f"feature blocks must share one [M, D_t] shape, got {shapes}")
    m, d = next(iter(shapes))
    dt = _flag_dtype(_dtype_flag(dtype))
    offsets = {}
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(MAGIC, VERSION, len(blocks), m, d, _dtype_flag(dtype)))
        for sid, block in blocks.items():
            offsets[sid] = fh.tell()
            fh.write(np.ascontiguousarray(block, dtype=dt).tobytes())
    with open(index_path(path), "w", encoding="utf-8") as fh:
        for sid, off in offsets.items():
            if "\t" in sid or "\n" in sid:
                raise ContainerError(f"sample id {sid!r} contains a tab or newline")
            fh.write(f"{sid}\t{off}\n")


@dataclass
class FeatureFile:
    """Random-access reader for a feature container."""

    path: Path
    count: int
    num_patches: int
    width: int
    dtype: np.dtype
    offsets: dict[str, int] = field(repr=False)

    @classmethod
    def open(cls, path) -> "FeatureFile":
        path = Path(path)
        with open(path, "rb") as fh:
            raw = fh.read(_FEATURE_HEADER.size)
        if len(raw) < _FEATURE_HEADER.size:
            raise ContainerError(f"{path}: truncated header")
        magic, version, count, m, d, flag = _FEATURE_HEADER.unpack(raw)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        offsets = {}
        with open(index_path(path), encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    sid, off = line.rstrip("\n").split("\t")
                    offsets[sid] = int(off)
        if len(offsets) != count:
            raise ContainerError(f"{path}: index lists {len(offsets)} samples, header says {count}")
        return cls(path, count, m, d, _flag_dtype(flag), offsets)

    def read(self, sample_id: str) -> np.ndarray:
        if sample_id not in self.offsets:
            raise MissingSampleError(f"sample {sample_id!r} not in feature file {self.path}")
        n = self.num_patches * self.width
        with open(self.path, "rb") as fh:
            fh.seek(self.offsets[sample_id])
            buf = fh.read(n * self.dtype.itemsize)
        if len(buf) != n * self.dtype.itemsize:
            raise ContainerError(f"{self.path}: truncated block for {sample_id!r}")
        return np.frombuffer(buf, dtype=self.dtype).reshape(self.num_patches, self.width).copy()


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    meta_text = "".join(f"{k}: {v}\n" for k, v in (meta or {}).items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(meta_text)))
        fh.write(meta_text)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            flag = _dtype_flag(arr.dtype)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)) + enc)
            fh.write(struct.pack("<II", flag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_flag_dtype(flag)).tobytes())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    pos = 4
    try:
        version, meta_len = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        meta = {}
        for line in data[pos:pos + meta_len].decode("utf-8").splitlines():
            k, _, v = line.partition(": ")
            meta[k] = v
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            flag, ndim = struct.unpack_from("<II", data, pos)
            pos += 8
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dt = _flag_dtype(flag)
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(data):
                raise ContainerError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise ContainerError(f"{path}: truncated checkpoint") from exc
    return tensors, meta
