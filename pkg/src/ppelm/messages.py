"""Payload codecs for the four protocol message types.

The frame header (see transport) carries the message type and run id; this
module owns the payload bytes. Wire vocabulary, all little-endian:

    string       u16 byte length, then UTF-8 bytes
    f64 matrix   u32 rows, u32 cols, then rows*cols float64, row-major
    ring matrix  u32 rows, u32 cols, then rows*cols u64 residues, row-major

SETUP   master -> party    run parameters, weight slice, bias share
ACCUM   ring hop           hop counter plus the masked accumulator
RESULT  master -> party    trained output weights (may be empty)
ABORT   anyone -> anyone   reason string; the receiver drops the run

SETUP payload layout, in order: party_id u16, parties u16, instance_count
u32, feature_count u32, scale_bits u8, normalize string, modulus u64,
mask_seed u64 (nonzero only for party 0), next_addr string, master_addr
string, w_slice f64 matrix, bias_share ring matrix (1 x L, or 0 x 0 when the
party was constructed with a preset contribution).
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import MalformedFrame
from .fieldcodec import FieldConfig


class MsgType(IntEnum):
    SETUP = 1
    ACCUM = 2
    RESULT = 3
    ABORT = 4


_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_SHAPE = struct.Struct("<II")


def _pack_string(out: list, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string field exceeds 65535 bytes")
    out.append(_U16.pack(len(raw)))
    out.append(raw)


def _pack_f64_matrix(out: list, m) -> None:
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    out.append(_SHAPE.pack(m.shape[0], m.shape[1]))
    out.append(m.tobytes())


def _pack_ring_matrix(out: list, m) -> None:
    m = np.ascontiguousarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if m.size and int(m.min()) < 0:
        raise ValueError("ring matrix entries must be non-negative residues")
    out.append(_SHAPE.pack(m.shape[0], m.shape[1]))
    out.append(m.astype("<u8").tobytes())


class _Reader:
    """Bounds-checked cursor over a payload; any misfit is a MalformedFrame."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise MalformedFrame(
                f"payload truncated at byte {self._pos} (wanted {n} more)"
            )
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self.take(1))[0]

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"string field is not valid UTF-8: {exc}") from None

    def _shape(self) -> tuple:
        rows, cols = _SHAPE.unpack(self.take(8))
        if rows * cols > (1 << 27):
            raise MalformedFrame(f"matrix {rows}x{cols} exceeds the size cap")
        return rows, cols

    def f64_matrix(self) -> np.ndarray:
        rows, cols = self._shape()
        raw = self.take(rows * cols * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()

    def ring_matrix(self) -> np.ndarray:
        rows, cols = self._shape()
        raw = self.take(rows * cols * 8)
        # u64 residues above 2**63 - 1 go negative here; consumers reject
        # them with a ring-range check, since the modulus always fits 62 bits.
        return np.frombuffer(raw, dtype="<u8").reshape(rows, cols).astype(np.int64)

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise MalformedFrame(
                f"{len(self._data) - self._pos} trailing bytes after payload"
            )


@dataclass(frozen=True)
class Setup:
    """Everything a party needs to join one run, except its private columns."""

    party_id: int
    parties: int
    instance_count: int
    feature_count: int
    scale_bits: int
    normalize: str
    modulus: int
    mask_seed: int
    next_addr: str
    master_addr: str
    w_slice: np.ndarray
    bias_share: np.ndarray

    @property
    def cfg(self) -> FieldConfig:
        return FieldConfig(self.modulus, self.scale_bits)

    def pack(self) -> bytes:
        out = [
            _U16.pack(self.party_id),
            _U16.pack(self.parties),
            _U32.pack(self.instance_count),
            _U32.pack(self.feature_count),
            _U8.pack(self.scale_bits),
        ]
        _pack_string(out, self.normalize)
        out.append(_U64.pack(self.modulus))
        out.append(_U64.pack(self.mask_seed))
        _pack_string(out, self.next_addr)
        _pack_string(out, self.master_addr)
        _pack_f64_matrix(out, self.w_slice)
        _pack_ring_matrix(out, self.bias_share)
        return b"".join(out)

    @classmethod
    def unpack(cls, payload: bytes) -> "Setup":
        r = _Reader(payload)
        party_id = r.u16()
        parties = r.u16()
        instance_count = r.u32()
        feature_count = r.u32()
        scale_bits = r.u8()
        normalize = r.string()
        modulus = r.u64()
        mask_seed = r.u64()
        next_addr = r.string()
        master_addr = r.string()
        w_slice = r.f64_matrix()
        bias_share = r.ring_matrix()
        r.finish()
        return cls(party_id, parties, instance_count, feature_count, scale_bits,
                   normalize, modulus, mask_seed, next_addr, master_addr,
                   w_slice, bias_share)


@dataclass(frozen=True)
class Accum:
    """One ring hop: the masked running sum after `hop` contributions."""

    hop: int
    values: np.ndarray

    def pack(self) -> bytes:
        out = [_U32.pack(self.hop)]
        _pack_ring_matrix(out, self.values)
        return b"".join(out)

    @classmethod
    def unpack(cls, payload: bytes) -> "Accum":
        r = _Reader(payload)
        hop = r.u32()
        values = r.ring_matrix()
        r.finish()
        return cls(hop, values)


@dataclass(frozen=True)
class Result:
    """Output weights broadcast at the end of a run; 0 x 0 for sum-only runs."""

    beta: np.ndarray

    def pack(self) -> bytes:
        out = []
        _pack_f64_matrix(out, self.beta)
        return b"".join(out)

    @classmethod
    def unpack(cls, payload: bytes) -> "Result":
        r = _Reader(payload)
        beta = r.f64_matrix()
        r.finish()
        return cls(beta)


@dataclass(frozen=True)
class Abort:
    reason: str

    def pack(self) -> bytes:
        out = []
        _pack_string(out, self.reason)
        return b"".join(out)

    @classmethod
    def unpack(cls, payload: bytes) -> "Abort":
        r = _Reader(payload)
        reason = r.string()
        r.finish()
        return cls(reason)


_DECODERS = {
    MsgType.SETUP: Setup.unpack,
    MsgType.ACCUM: Accum.unpack,
    MsgType.RESULT: Result.unpack,
    MsgType.ABORT: Abort.unpack,
}


def unpack_payload(msg_type: int, payload: bytes):
    try:
        decoder = _DECODERS[MsgType(msg_type)]
    except ValueError:
        raise MalformedFrame(f"unknown message type {msg_type}") from None
    return decoder(payload)
