"""Named parameter storage and the PGSG binary checkpoint format.

Layout (all integers little-endian)::

    b"PGSG" | u32 version
    repeated: u32 name_len | name (utf-8) | u8 dtype tag | u32 rank | u32 dims[rank] | raw values
    u32 crc32 of every preceding byte
"""
from __future__ import annotations

import os
import struct
import zlib
from collections import OrderedDict
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"PGSG"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class ParamStore(Mapping[str, Tensor]):
    """Ordered, fixed-shape collection of named parameter tensors."""

    def __init__(self, named: Mapping[str, Tensor] | None = None):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (named or {}).items():
            self.add(name, t)

    @classmethod
    def from_module(cls, module, prefix: str = "") -> "ParamStore":
        return cls(OrderedDict(module.named_parameters(prefix)))

    def add(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                if strict:
                    raise CheckpointError(f"checkpoint lacks parameter {name!r}")
                continue
            a = arrays[name]
            if a.shape != t.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: {a.shape} vs {t.shape}")
            t.data[...] = a

    def save(self, path) -> None:
        save_arrays(path, self.arrays())

    def load(self, path) -> None:
        self.load_arrays(load_arrays(path))


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_arrays(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a PGSG checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupt or truncated)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 8
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            dt = _DTYPES[tag]
            count = int(np.prod(dims)) if rank else 1
            nbytes = count * dt.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return out


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    blob = encode_arrays(arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode_arrays(fh.read())
