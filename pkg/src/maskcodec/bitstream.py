"""Bit-exact token stream serialization ("LCBS") and bandwidth accounting.

Layout (all integers little-endian):

    offset  size  field
    0       4     magic "LCBS"
    4       4     version (u32, currently 1)
    8       4     sample_rate in Hz (u32)
    12      4     hop in samples (u32)
    16      2     n_total stages (u16)
    18      2     n_parallel stages (u16)
    20      4     codebook_size (u32)
    24      4     frame_count (u32)
    28      ...   payload: tokens at ceil(log2(codebook_size)) bits each,
                  frame-major then stage-major, MSB-first, final byte
                  zero-padded

Frame-major ordering lets partial reads stream whole frames.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ShapeError

__all__ = [
    "StreamHeader",
    "TokenStream",
    "token_bits",
    "pack",
    "unpack",
    "bandwidth_bps",
]

STREAM_MAGIC = b"LCBS"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sIIIHHII")


def token_bits(codebook_size: int) -> int:
    return int(math.ceil(math.log2(codebook_size)))


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    hop: int
    n_total: int
    n_parallel: int
    codebook_size: int
    frame_count: int
    version: int = STREAM_VERSION

    def __post_init__(self):
        if self.codebook_size < 2:
            raise DataError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.frame_count < 0 or self.n_total < 1:
            raise DataError("frame_count must be >= 0 and n_total >= 1")
        if not (1 <= self.n_parallel <= self.n_total):
            raise DataError("need 1 <= n_parallel <= n_total")
        if self.sample_rate < 1 or self.hop < 1:
            raise DataError("sample_rate and hop must be positive")


@dataclass(frozen=True)
class TokenStream:
    header: StreamHeader
    tokens: np.ndarray  # (frame_count, n_total)

    def __post_init__(self):
        tokens = np.asarray(self.tokens)
        if tokens.shape != (self.header.frame_count, self.header.n_total):
            raise ShapeError(
                f"tokens shape {tokens.shape} does not match header "
                f"({self.header.frame_count}, {self.header.n_total})"
            )
        if not np.issubdtype(tokens.dtype, np.integer):
            raise DataError("tokens must be integers")
        if tokens.size and (
            tokens.min() < 0 or tokens.max() >= self.header.codebook_size
        ):
            raise DataError("token index out of range for codebook size")
        object.__setattr__(self, "tokens", tokens.astype(np.uint32))

    def __eq__(self, other):
        return (
            isinstance(other, TokenStream)
            and self.header == other.header
            and np.array_equal(self.tokens, other.tokens)
        )


def pack(ts: TokenStream) -> bytes:
    h = ts.header
    header = _HEADER.pack(
        STREAM_MAGIC,
        h.version,
        h.sample_rate,
        h.hop,
        h.n_total,
        h.n_parallel,
        h.codebook_size,
        h.frame_count,
    )
    bits_per = token_bits(h.codebook_size)
    flat = ts.tokens.reshape(-1)  # frame-major
    shifts = np.arange(bits_per - 1, -1, -1, dtype=np.uint32)
    bits = ((flat[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return header + np.packbits(bits).tobytes()


def unpack(blob: bytes) -> TokenStream:
    if len(blob) < 4 or blob[:4] != STREAM_MAGIC:
        raise FormatError("not a token stream (bad magic)")
    if len(blob) < _HEADER.size:
        raise DataError("truncated stream header")
    (_, version, sample_rate, hop, n_total, n_parallel, codebook_size, frame_count
     ) = _HEADER.unpack_from(blob)
    if version != STREAM_VERSION:
        raise FormatError(f"unsupported stream version {version}")
    header = StreamHeader(
        sample_rate=sample_rate,
        hop=hop,
        n_total=n_total,
        n_parallel=n_parallel,
        codebook_size=codebook_size,
        frame_count=frame_count,
        version=version,
    )
    bits_per = token_bits(codebook_size)
    n_tokens = frame_count * n_total
    payload_bytes = (n_tokens * bits_per + 7) // 8
    payload = blob[_HEADER.size :]
    if len(payload) < payload_bytes:
        raise DataError(
            f"truncated payload: need {payload_bytes} bytes, got {len(payload)}"
        )
    bits = np.unpackbits(np.frombuffer(payload[:payload_bytes], dtype=np.uint8))
    bits = bits[: n_tokens * bits_per].reshape(n_tokens, bits_per).astype(np.uint32)
    weights = 1 << np.arange(bits_per - 1, -1, -1, dtype=np.uint32)
    tokens = (bits * weights).sum(axis=1).reshape(frame_count, n_total)
    if tokens.size and tokens.max() >= codebook_size:
        raise DataError("decoded token index out of range")
    return TokenStream(header=header, tokens=tokens)


def bandwidth_bps(header: StreamHeader) -> float:
    """Token bit-rate: frame rate times stages times bits per token."""
    return (
        header.sample_rate / header.hop
    ) * header.n_total * token_bits(header.codebook_size)
