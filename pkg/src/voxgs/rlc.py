"""Run-length coding of integer streams with varint/zigzag serialization.

Per-channel byte format (bit-exact):
    [varint element_count] then repeated [varint run_length >= 1][varint zigzag(value)]
until element_count elements have been produced. Varints are little-endian
base-128 with continuation bit 0x80. Runs are maximal: adjacent tokens carry
distinct values. There is no further entropy-coding stage (bypass mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError
from .geometry import is_morton_sorted
from .model import GROUPS, AnchorCloud, AttributeLayout

# Decoders refuse element counts above this to keep allocations bounded on
# hostile input; legitimate streams in this codec stay far below it.
MAX_ELEMENTS = 1 << 26

_MAX_VARINT_BYTES = 10  # enough for any uint64


def zigzag_encode(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return ((v << 1) ^ (v >> 63)).astype(np.uint64)


def zigzag_decode(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint64)
    return ((v >> np.uint64(1)).astype(np.int64)) ^ -((v & np.uint64(1)).astype(np.int64))


def varint_pack(values: np.ndarray) -> bytes:
    """Serialize an array of uint64 as concatenated LEB128 varints."""
    v = np.ascontiguousarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbits = np.zeros(v.shape, dtype=np.int64)
    tmp = v.copy()
    while np.any(tmp):
        nz = tmp > 0
        nbits[nz] += 1
        tmp >>= np.uint64(1)
    nbytes = np.maximum(1, -(-nbits // 7))
    offsets = np.concatenate(([0], np.cumsum(nbytes)))
    out = np.zeros(offsets[-1], dtype=np.uint8)
    for j in range(int(nbytes.max())):
        sel = nbytes > j
        byte = (v[sel] >> np.uint64(7 * j)) & np.uint64(0x7F)
        cont = (nbytes[sel] - 1 > j).astype(np.uint64) * np.uint64(0x80)
        out[offsets[:-1][sel] + j] = (byte | cont).astype(np.uint8)
    return out.tobytes()


def varint_unpack_all(data: bytes) -> np.ndarray:
    """Parse every varint in the buffer; raises on truncation or overlength."""
    buf = np.frombuffer(data, dtype=np.uint8)
    if buf.size == 0:
        return np.zeros(0, dtype=np.uint64)
    cont = (buf & 0x80) != 0
    if cont[-1]:
        raise CorruptStreamError("truncated varint at end of stream")
    ends = np.flatnonzero(~cont)
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if np.any(lengths > _MAX_VARINT_BYTES):
        raise CorruptStreamError("varint longer than 10 bytes")
    values = np.zeros(ends.size, dtype=np.uint64)
    for j in range(int(lengths.max())):
        sel = lengths > j
        values[sel] |= (buf[starts[sel] + j].astype(np.uint64) & np.uint64(0x7F)) << np.uint64(7 * j)
    return values


@dataclass(frozen=True)
class RlcStream:
    """Maximal-run tokenization of an integer sequence plus its serialization."""

    values: np.ndarray       # (t,) int64 token values, adjacent entries distinct
    run_lengths: np.ndarray  # (t,) int64, all >= 1
    serialized: bytes

    @property
    def element_count(self) -> int:
        return int(self.run_lengths.sum())

    @property
    def bits(self) -> int:
        return 8 * len(self.serialized)


def tokenize_runs(values: np.ndarray):
    """Split a sequence into (token values, run lengths) with maximal runs."""
    seq = np.asarray(values, dtype=np.int64).ravel()
    if seq.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(seq[1:] != seq[:-1])
    starts = np.concatenate(([0], breaks + 1))
    runs = np.diff(np.concatenate((starts, [seq.size])))
    return seq[starts], runs


def rlc_encode(values) -> RlcStream:
    """Encode a signed integer sequence; empty sequences are allowed."""
    seq = np.asarray(values, dtype=np.int64).ravel()
    token_values, runs = tokenize_runs(seq)
    interleaved = np.empty(2 * token_values.size + 1, dtype=np.uint64)
    interleaved[0] = seq.size
    interleaved[1::2] = runs.astype(np.uint64)
    interleaved[2::2] = zigzag_encode(token_values)
    return RlcStream(
        values=token_values,
        run_lengths=runs,
        serialized=varint_pack(interleaved),
    )


def _expand_tokens(token_values, runs):
    return np.repeat(token_values, runs)


def _decode_channel(varints: np.ndarray, cursor: int, max_elements: int):
    """Decode one channel stream starting at varint index cursor.

    Returns (decoded int64 array, next cursor).
    """
    if cursor >= varints.size:
        raise CorruptStreamError("missing channel stream")
    count = int(varints[cursor])
    if count > max_elements:
        raise CorruptStreamError(f"element count {count} exceeds limit {max_elements}")
    cursor += 1
    # Tokens for this channel occupy pairs starting at cursor; later channels
    # follow, so walk the cumulative run sum until it reaches count exactly.
    run_slots = varints[cursor::2]
    cum = np.cumsum(run_slots.astype(np.int64))
    if count == 0:
        return np.zeros(0, dtype=np.int64), cursor
    hit = np.searchsorted(cum, count)
    if hit >= cum.size or cum[hit] != count:
        raise CorruptStreamError("run lengths do not sum to the element count")
    tokens = hit + 1
    end = cursor + 2 * tokens
    if end > varints.size:
        raise CorruptStreamError("truncated token stream")
    runs = run_slots[:tokens].astype(np.int64)
    if np.any(runs < 1):
        raise CorruptStreamError("run length of zero")
    values = zigzag_decode(varints[cursor + 1 : end : 2])
    return _expand_tokens(values, runs), end


def rlc_decode(data, max_elements: int = MAX_ELEMENTS) -> np.ndarray:
    """Decode a single serialized channel stream back to the exact sequence."""
    if isinstance(data, RlcStream):
        data = data.serialized
    varints = varint_unpack_all(bytes(data))
    if varints.size == 0:
        raise CorruptStreamError("empty stream")
    decoded, end = _decode_channel(varints, 0, max_elements)
    if end != varints.size:
        raise CorruptStreamError("trailing bytes after stream")
    return decoded


def encode_attributes(cloud: AnchorCloud):
    """RLC-encode the three attribute groups of a Morton-sorted cloud.

    Channels are serialized channel-major: within each group, all anchors'
    channel 0, then channel 1, and so on, each channel an independent stream.
    Returns (payloads, bits) dicts keyed by group name.
    """
    if cloud.anchor_count > 1 and not is_morton_sorted(cloud.positions):
        raise ValueError("cloud must be sorted in Morton order before attribute coding")
    payloads = {}
    bits = {}
    for name in GROUPS:
        mat = cloud.group(name)
        chunks = [rlc_encode(mat[:, c]).serialized for c in range(mat.shape[1])]
        payloads[name] = b"".join(chunks)
        bits[name] = 8 * len(payloads[name])
    return payloads, bits


def decode_attributes(payloads, layout: AttributeLayout, anchor_count: int):
    """Invert encode_attributes; returns (offsets, features, scalings) int32 matrices."""
    if anchor_count < 0 or anchor_count > MAX_ELEMENTS:
        raise CorruptStreamError(f"implausible anchor count {anchor_count}")
    out = {}
    for name in GROUPS:
        dims = layout.dims_for(name)
        varints = varint_unpack_all(bytes(payloads[name]))
        mat = np.zeros((anchor_count, dims), dtype=np.int64)
        cursor = 0
        for c in range(dims):
            column, cursor = _decode_channel(varints, cursor, anchor_count)
            if column.size != anchor_count:
                raise CorruptStreamError(
                    f"{name} channel {c} decodes {column.size} elements, expected {anchor_count}"
                )
            mat[:, c] = column
        if cursor != varints.size:
            raise CorruptStreamError(f"trailing bytes after {name} channels")
        if mat.size and (mat.min() < -(2**31) or mat.max() > 2**31 - 1):
            raise CorruptStreamError(f"{name} values overflow int32")
        out[name] = mat.astype(np.int32)
    return out["offsets"], out["features"], out["scalings"]
