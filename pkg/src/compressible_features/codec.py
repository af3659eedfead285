"""Frozen probability tables and a byte-oriented range coder.

The coder keeps a 32-bit ``low``/``range`` state and splits the range with a
multiply-and-shift against 16-bit cumulative frequencies, so sub-intervals
tile the range exactly with no division remainder lost. Bytes leave on
renormalization; a carry out of ``low`` is pushed back into bytes already
written. The decoder pads the payload with zero bytes, which lets the
encoder drop trailing zeros from its final flush.

Symbols outside a channel's table support are coded as the escape symbol
followed by a raw little-endian int32 in a separate section of the blob.
"""

from __future__ import annotations

import hashlib
import io
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import expit

from .entropy_model import FactorizedDensity, interval_probability

__all__ = [
    "PRECISION",
    "TOTAL",
    "CodecError",
    "ChecksumError",
    "ProbabilityTable",
    "CompressedBlob",
    "build_tables",
    "RangeEncoder",
    "RangeDecoder",
    "encode",
    "decode",
    "coded_size_bits",
    "HEADER_SIZE",
]

PRECISION = 16
TOTAL = 1 << PRECISION
TAIL_MASS = 2.0**-PRECISION
MAX_SUPPORT = 1 << 20

_MASK = 0xFFFFFFFF
_TOP = 1 << 32
_BOTTOM = 1 << 24

TABLE_MAGIC = b"CFTB"
TABLE_VERSION = 1
BLOB_MAGIC = b"CFZ1"
BLOB_VERSION = 1
_BLOB_HEADER = struct.Struct("<4sHIQI")
HEADER_SIZE = _BLOB_HEADER.size


class CodecError(ValueError):
    """Malformed, truncated, or inconsistent compressed data."""


class ChecksumError(CodecError):
    """Blob was produced with different probability tables."""


# -- probability tables -------------------------------------------------------


@dataclass(eq=False)
class ProbabilityTable:
    """Per-channel integer CDFs, each with a trailing escape symbol."""

    support_min: List[int]
    cumulative: List[np.ndarray]
    _checksum: int = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.support_min) != len(self.cumulative):
            raise ValueError("support_min and cumulative differ in channel count")
        for c, cum in enumerate(self.cumulative):
            cum = np.asarray(cum, dtype=np.int64)
            if cum.ndim != 1 or cum.size < 2 or cum[0] != 0 or cum[-1] != TOTAL:
                raise ValueError(f"channel {c}: cumulative must run from 0 to {TOTAL}")
            if np.any(np.diff(cum) < 1):
                raise ValueError(f"channel {c}: every symbol needs frequency >= 1")
            self.cumulative[c] = cum
        self._lists = [cum.tolist() for cum in self.cumulative]
        self.support_min = [int(v) for v in self.support_min]

    def __eq__(self, other):
        if not isinstance(other, ProbabilityTable):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    @property
    def channels(self) -> int:
        return len(self.cumulative)

    def support_len(self, channel: int) -> int:
        return self.cumulative[channel].size - 2

    def frequencies(self, channel: int) -> np.ndarray:
        return np.diff(self.cumulative[channel])

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(TABLE_MAGIC)
        out.write(struct.pack("<HI", TABLE_VERSION, self.channels))
        for lo, cum in zip(self.support_min, self.cumulative):
            out.write(struct.pack("<iI", lo, cum.size - 2))
            out.write(np.diff(cum).astype("<u2").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProbabilityTable":
        if data[:4] != TABLE_MAGIC:
            raise CodecError("not a CFTB table file")
        try:
            version, channels = struct.unpack_from("<HI", data, 4)
            if version != TABLE_VERSION:
                raise CodecError(f"unsupported table version {version}")
            pos = 10
            mins, cums = [], []
            for _ in range(channels):
                lo, length = struct.unpack_from("<iI", data, pos)
                pos += 8
                n = length + 1
                if pos + 2 * n > len(data):
                    raise CodecError("truncated table file")
                freq = np.frombuffer(data, dtype="<u2", count=n, offset=pos).astype(np.int64)
                pos += 2 * n
                mins.append(lo)
                cums.append(np.concatenate([[0], np.cumsum(freq)]))
        except struct.error as exc:
            raise CodecError("truncated table file") from exc
        if pos != len(data):
            raise CodecError("trailing bytes after table file")
        try:
            return cls(mins, cums)
        except ValueError as exc:
            raise CodecError(str(exc)) from exc

    @property
    def checksum(self) -> int:
        if self._checksum is None:
            digest = hashlib.blake2b(self.to_bytes(), digest_size=8).digest()
            self._checksum = int.from_bytes(digest, "little")
        return self._checksum

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProbabilityTable":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _last_true(pred) -> int:
    """Largest integer ``n`` with ``pred(n)``, for ``pred`` true below a cut and false above."""
    if pred(0):
        lo, step = 0, 1
        while pred(step):
            lo = step
            step *= 2
            if step > MAX_SUPPORT:
                raise ValueError("density support exceeds 2^20 symbols")
        hi = step
    else:
        hi, step = 0, 1
        while not pred(-step):
            hi = -step
            step *= 2
            if step > MAX_SUPPORT:
                raise ValueError("density support exceeds 2^20 symbols")
        lo = -step
    # pred(lo) is true, pred(hi) is false
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _renormalize(freq: np.ndarray) -> np.ndarray:
    freq = freq.copy()
    diff = TOTAL - int(freq.sum())
    order = np.argsort(-freq, kind="stable")
    if diff > 0:
        freq[order[0]] += diff
        return freq
    for i in order:
        if diff == 0:
            break
        take = min(int(freq[i]) - 1, -diff)
        freq[i] -= take
        diff += take
    if diff != 0:
        raise ValueError("support too wide for 16-bit frequency precision")
    return freq


def build_tables(density: FactorizedDensity) -> ProbabilityTable:
    """Freeze ``density`` into 16-bit tables.

    Support per channel is the tightest integer range whose tails each hold
    less than ``2^-16``. Frequencies are ``round(pmf * 2^16)`` floored at 1;
    the escape symbol takes the leftover tail mass (at least one count).
    """
    threshold = float(np.log(TAIL_MASS) - np.log1p(-TAIL_MASS))
    mins, cums = [], []
    for c in range(density.channels):
        logit_fn = lambda x, c=c: float(density.channel_logits(c, x)[0])  # noqa: E731
        n_lo = _last_true(lambda n: logit_fn(n - 0.5) < threshold)
        n_hi = _last_true(lambda n: logit_fn(n + 0.5) <= -threshold) + 1
        length = n_hi - n_lo + 1
        if length > MAX_SUPPORT:
            raise ValueError("density support exceeds 2^20 symbols")
        if length + 1 > TOTAL:
            raise ValueError("density support too wide for 16-bit tables")
        edges = density.channel_logits(c, np.arange(n_lo, n_hi + 2) - 0.5)
        pmf = interval_probability(edges[:-1], edges[1:])
        tail = expit(edges[0]) + expit(-edges[-1])
        freq = np.maximum(np.rint(pmf * TOTAL), 1).astype(np.int64)
        escape = max(1, int(np.rint(tail * TOTAL)))
        freq = _renormalize(np.append(freq, escape))
        mins.append(n_lo)
        cums.append(np.concatenate([[0], np.cumsum(freq)]))
    return ProbabilityTable(mins, cums)


# -- range coder --------------------------------------------------------------


class RangeEncoder:
    """Encode symbols given as ``[cum_low, cum_high)`` out of ``2^16``."""

    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def _carry(self):
        out = self.out
        i = len(out) - 1
        while out[i] == 0xFF:
            out[i] = 0
            i -= 1
        out[i] += 1

    def encode(self, cum_low: int, cum_high: int) -> None:
        r = self.range
        lo = (r * cum_low) >> PRECISION
        self.range = ((r * cum_high) >> PRECISION) - lo
        self.low += lo
        if self.low >= _TOP:
            self.low -= _TOP
            self._carry()
        while self.range < _BOTTOM:
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK
            self.range <<= 8

    def finish(self) -> bytes:
        """Shortest flush whose zero-padded value lands inside the final interval."""
        low, high = self.low, self.low + self.range
        for nbytes in range(5):
            unit = 1 << (32 - 8 * nbytes)
            value = -(-low // unit) * unit
            if value < high:
                break
        if value >= _TOP:
            value -= _TOP
            self._carry()
        for k in range(nbytes):
            self.out.append((value >> (24 - 8 * k)) & 0xFF)
        end = len(self.out)
        while end and self.out[end - 1] == 0:
            end -= 1
        del self.out[end:]
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK
        self.value = 0
        for _ in range(4):
            self.value = (self.value << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self.pos
        self.pos = pos + 1
        return self.data[pos] if pos < len(self.data) else 0

    def decode(self, cumulative) -> int:
        """Decode one symbol index against a cumulative array ending in ``2^16``."""
        r = self.range
        v = self.value
        if v >= r:
            raise CodecError("corrupted range-coded stream")
        target = (((v + 1) << PRECISION) - 1) // r
        s = bisect_right(cumulative, target) - 1
        lo = (r * cumulative[s]) >> PRECISION
        hi = (r * cumulative[s + 1]) >> PRECISION
        if not lo <= v < hi:
            raise CodecError("corrupted range-coded stream")
        v -= lo
        r = hi - lo
        while r < _BOTTOM:
            v = (v << 8) | self._next_byte()
            r <<= 8
        self.value = v
        self.range = r
        return s

    @property
    def bytes_consumed(self) -> int:
        return self.pos


# -- blobs --------------------------------------------------------------------


@dataclass
class CompressedBlob:
    channel_count: int
    table_checksum: int
    payload: bytes
    escapes: List[int]
    version: int = BLOB_VERSION

    def to_bytes(self) -> bytes:
        header = _BLOB_HEADER.pack(BLOB_MAGIC, self.version, self.channel_count, self.table_checksum, len(self.payload))
        return header + self.payload + struct.pack(f"<{len(self.escapes)}i", *self.escapes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        """Parse a blob. The escape section is kept raw until decoding knows its count."""
        if len(data) < HEADER_SIZE:
            raise CodecError("truncated blob header")
        magic, version, channels, checksum, length = _BLOB_HEADER.unpack_from(data)
        if magic != BLOB_MAGIC:
            raise CodecError("not a CFZ1 blob")
        if version != BLOB_VERSION:
            raise CodecError(f"unsupported blob version {version}")
        end = HEADER_SIZE + length
        if end > len(data):
            raise CodecError("truncated blob payload")
        tail = data[end:]
        if len(tail) % 4:
            raise CodecError("escape section is not a whole number of int32 values")
        escapes = list(struct.unpack(f"<{len(tail) // 4}i", tail))
        return cls(channels, checksum, bytes(data[HEADER_SIZE:end]), escapes, version)

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.payload) + 4 * len(self.escapes)


def encode(z_hat, tables: ProbabilityTable) -> CompressedBlob:
    """Range-code one example's quantized features, one table per channel."""
    z_hat = np.asarray(z_hat).reshape(-1)
    if z_hat.size != tables.channels:
        raise ValueError(f"expected {tables.channels} symbols, got {z_hat.size}")
    if z_hat.size and not np.issubdtype(z_hat.dtype, np.integer):
        if not np.array_equal(z_hat, np.round(z_hat)):
            raise ValueError("encode expects integer symbols")
    enc = RangeEncoder()
    escapes = []
    for value, lo, cum in zip(z_hat.tolist(), tables.support_min, tables._lists):
        value = int(value)
        idx = value - lo
        n = len(cum) - 2
        if 0 <= idx < n:
            enc.encode(cum[idx], cum[idx + 1])
        else:
            if not -(2**31) <= value < 2**31:
                raise OverflowError(f"symbol {value} outside int32 range")
            enc.encode(cum[n], TOTAL)
            escapes.append(value)
    return CompressedBlob(tables.channels, tables.checksum, enc.finish(), escapes)


def decode(blob, tables: ProbabilityTable) -> np.ndarray:
    """Inverse of :func:`encode`; accepts a :class:`CompressedBlob` or its bytes."""
    if isinstance(blob, (bytes, bytearray, memoryview)):
        blob = CompressedBlob.from_bytes(bytes(blob))
    if blob.table_checksum != tables.checksum:
        raise ChecksumError("blob was encoded with different probability tables")
    if blob.channel_count != tables.channels:
        raise CodecError("channel count does not match tables")
    dec = RangeDecoder(blob.payload)
    out = np.empty(tables.channels, dtype=np.int64)
    escapes = iter(blob.escapes)
    n_escapes = 0
    for c, (lo, cum) in enumerate(zip(tables.support_min, tables._lists)):
        s = dec.decode(cum)
        if s == len(cum) - 2:
            try:
                out[c] = next(escapes)
            except StopIteration:
                raise CodecError("escape section shorter than escape count") from None
            n_escapes += 1
        else:
            out[c] = lo + s
    if n_escapes != len(blob.escapes):
        raise CodecError("escape section longer than escape count")
    if tables.channels and dec.bytes_consumed < len(blob.payload):
        raise CodecError("payload has unconsumed bytes")
    return out


def coded_size_bits(blob) -> int:
    """Bits on disk for one blob: header, payload and escape section."""
    return 8 * len(blob)
