"""Binary network checkpoints: fixed little-endian layout, CRC-protected.

File layout (all integers little-endian):

    bytes 0-3    magic "MDNZ"
    bytes 4-7    format version (u32, currently 1)
    next         arch descriptor: u16 length + UTF-8 bytes
    payload      u32 tensor count, then per tensor:
                     u16 name length + UTF-8 name
                     u8 rank, rank * u32 dims
                     prod(dims) * f32 values, row-major
    trailer      u32 CRC-32 of the payload region

Round-trips are bitwise lossless; a failed CRC refuses to load.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DataError
from .nn import Arch, ConvLayer, NetworkParams

MAGIC = b"MDNZ"
VERSION = 1


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded)), encoded,
             struct.pack("<B", arr.ndim)]
    parts += [struct.pack("<I", d) for d in arr.shape]
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params: NetworkParams):
    """Write params; tensor order is layerNN.weight, layerNN.bias."""
    tensors = []
    for i, layer in enumerate(params.layers):
        tensors.append(_pack_tensor(f"layer{i:02d}.weight", layer.weights))
        tensors.append(_pack_tensor(f"layer{i:02d}.bias", layer.bias))
    payload = struct.pack("<I", len(tensors)) + b"".join(tensors)
    arch = params.arch.describe().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<H", len(arch)))
        fh.write(arch)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise DataError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> NetworkParams:
    """Read and CRC-verify a checkpoint; rebuilds NetworkParams."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not a MDNZ checkpoint")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    arch = Arch.parse(r.take(r.u16()).decode("utf-8"))
    payload_start = r.pos
    if len(buf) < payload_start + 8:
        raise DataError(f"{path}: checkpoint truncated")
    payload = buf[payload_start:-4]
    (stored_crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise DataError(f"{path}: CRC mismatch, refusing to load")
    tensors = {}
    count = r.u32()
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = np.array(data, dtype=np.float32)  # own writable copy
    layers = []
    for i in range(arch.depth):
        try:
            w = tensors[f"layer{i:02d}.weight"]
            b = tensors[f"layer{i:02d}.bias"]
        except KeyError as exc:
            raise DataError(f"{path}: missing tensor {exc}") from exc
        layers.append(ConvLayer(w, b))
    return NetworkParams(layers, arch)
