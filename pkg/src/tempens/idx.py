"""Reader and writer for the IDX binary container (MNIST, KMNIST, Fashion-MNIST).

Layout, all integers big-endian::

    u32  magic   0x0000 08 NN   (08 = unsigned byte, NN = number of dims)
    u32  size    one per dimension
    u8[] payload row-major, exactly prod(sizes) bytes
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, TrailingBytes, Truncated

UNSIGNED_BYTE = 0x08
# magic word -> number of dimensions
_MAGICS = {0x00000801: 1, 0x00000803: 3}
_GZIP_HEADER = b"\x1f\x8b"


@dataclass(frozen=True)
class RawIdxTensor:
    dims: tuple[int, ...]
    data: bytes
    element_kind: str = "unsigned-byte"

    def __post_init__(self):
        if len(self.dims) not in (1, 3):
            raise ValueError(f"IDX tensors here are 1-D or 3-D, got dims {self.dims}")
        if any(d < 0 for d in self.dims):
            raise ValueError(f"negative dimension in {self.dims}")
        if int(np.prod(self.dims, dtype=np.int64)) != len(self.data):
            raise ValueError(f"dims {self.dims} do not match payload length {len(self.data)}")

    def to_numpy(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.dims)


def parse_idx(raw: bytes) -> RawIdxTensor:
    if len(raw) < 4:
        raise Truncated(f"need 4 bytes of magic, got {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in _MAGICS:
        raise BadMagic(f"unsupported IDX magic 0x{magic:08x}")
    ndim = _MAGICS[magic]
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise Truncated(f"header needs {header_len} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = raw[header_len:]
    if len(payload) < expected:
        raise Truncated(f"payload has {len(payload)} bytes, header promises {expected}")
    if len(payload) > expected:
        raise TrailingBytes(f"payload has {len(payload) - expected} bytes beyond the {expected} promised")
    return RawIdxTensor(dims=tuple(dims), data=bytes(payload))


def serialize_idx(tensor: RawIdxTensor) -> bytes:
    magic = (UNSIGNED_BYTE << 8) | len(tensor.dims)
    header = struct.pack(f">I{len(tensor.dims)}I", magic, *tensor.dims)
    return header + tensor.data


def read_idx_file(path) -> RawIdxTensor:
    """Parse an IDX file, decompressing it first if it is gzipped."""
    raw = Path(path).read_bytes()
    if raw[:2] == _GZIP_HEADER:
        raw = gzip.decompress(raw)
    return parse_idx(raw)
