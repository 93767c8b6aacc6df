"""Wire format for framed messages.

Every frame is::

    magic  : 4 bytes, 0x52 0x54 0x52 0x4E ("RTRN")
    tag    : unsigned 32-bit, big-endian
    length : unsigned 32-bit, big-endian, payload byte count
    payload: `length` bytes

Float payloads travel as little-endian 32-bit floats regardless of host
endianness; the header stays big-endian. Fixed so independent implementations
can interoperate bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import WireProtocolError

FRAME_MAGIC = b"RTRN"
_HEADER = struct.Struct(">4sII")
HEADER_SIZE = _HEADER.size


def encode_frame(tag: int, payload: bytes) -> bytes:
    if not 0 <= tag < 2 ** 32:
        raise ValueError(f"tag {tag} out of u32 range")
    return _HEADER.pack(FRAME_MAGIC, tag, len(payload)) + payload


def decode_header(header: bytes) -> tuple[int, int]:
    """Parse a 12-byte header, returning (tag, payload_length)."""
    if len(header) != HEADER_SIZE:
        raise WireProtocolError(f"truncated frame header ({len(header)} bytes)")
    magic, tag, length = _HEADER.unpack(header)
    if magic != FRAME_MAGIC:
        raise WireProtocolError(f"bad frame magic {magic!r}")
    return tag, length


def floats_to_wire(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def wire_to_floats(payload: bytes) -> np.ndarray:
    if len(payload) % 4:
        raise WireProtocolError(f"float payload length {len(payload)} not a multiple of 4")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=False)
