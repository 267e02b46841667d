"""Lossy INT4 codecs for half-precision activation tensors.

Three quantization layouts cover the tensor families that show up in a
transformer block, plus a bit packer for dropout masks:

* symmetric group quantization: zero-centered 4-bit codes with one scale per
  group of 128 flattened elements, or one scale per channel (column) for
  tensors whose channels have very different magnitudes;
* asymmetric group quantization: adds a per-group offset so one-sided
  distributions (softmax outputs, attention scores) keep precision;
* outlier-separated quantization: channels whose absolute sum is a z-score
  outlier are stored verbatim in half precision and the remainder is
  symmetric-quantized;
* bit masks: 8 mask bytes pack into one payload byte.

Quantization uses the scale that is actually stored (half precision), so the
round-trip error of a non-clipped element is bounded by half that scale with
no further float caveats.  Codes live in [-8, 7] and pack two to a byte, the
earlier element in the low nibble, as 4-bit two's complement.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import (
    CorruptPayloadError,
    NonBinaryMaskError,
    NonFiniteInputError,
    TooManyOutliersError,
    ValidationError,
)
from .profiles import LayerKind

MAGIC = b"ADC1"
DEFAULT_GROUP_SIZE = 128
DEFAULT_Z_THRESHOLD = 3.0
#: Sentinel group size: one group per channel (column), accessed with strides
#: instead of a transpose.
PER_CHANNEL = 0

# Smallest positive float16 subnormal; used when a true scale underflows so a
# nonzero group never quantizes against a zero scale.
_MIN_SCALE = np.float16(2.0**-24)

_HEADER = struct.Struct("<4sBIIIII")
SERIALIZED_HEADER_BYTES = _HEADER.size  # 25


class Scheme(IntEnum):
    SYMMETRIC_GROUP = 0
    ASYMMETRIC_GROUP = 1
    OUTLIER_SEPARATED = 2
    BIT_MASK = 3


@dataclass(frozen=True)
class SchemeSpec:
    """Compression scheme plus its tuning knobs."""

    scheme: Scheme
    group_size: int = DEFAULT_GROUP_SIZE
    z_threshold: float = DEFAULT_Z_THRESHOLD


def scheme_for(kind: LayerKind) -> SchemeSpec:
    """Pick the compression scheme for a tensor by the operator that made it."""
    if kind in (LayerKind.LINEAR, LayerKind.LAYER_NORM, LayerKind.GELU):
        return SchemeSpec(Scheme.OUTLIER_SEPARATED, DEFAULT_GROUP_SIZE, DEFAULT_Z_THRESHOLD)
    if kind is LayerKind.QKV_MATRIX:
        return SchemeSpec(Scheme.SYMMETRIC_GROUP, PER_CHANNEL)
    if kind in (LayerKind.SOFTMAX, LayerKind.SCORE):
        return SchemeSpec(Scheme.ASYMMETRIC_GROUP, DEFAULT_GROUP_SIZE)
    if kind is LayerKind.DROPOUT_MASK:
        return SchemeSpec(Scheme.BIT_MASK, 0)
    return SchemeSpec(Scheme.SYMMETRIC_GROUP, DEFAULT_GROUP_SIZE)


@dataclass(frozen=True)
class CompressedTensor:
    """A quantized tensor (or packed mask) and everything needed to restore it.

    `scales` and `offsets` hold float32 values that are exactly representable
    in float16; that is what the wire format stores.  `outlier_values` is laid
    out one column per flagged channel, shape (outliers, rows).
    """

    scheme: Scheme
    rows: int
    cols: int
    group_size: int
    scales: np.ndarray
    offsets: np.ndarray | None
    packed_codes: bytes
    outlier_indices: np.ndarray | None = None
    outlier_values: np.ndarray | None = None
    mask_bits: bytes | None = None

    @property
    def group_count(self) -> int:
        return len(self.scales)

    @property
    def outlier_count(self) -> int:
        return 0 if self.outlier_indices is None else len(self.outlier_indices)

    @property
    def original_bytes(self) -> int:
        per_element = 1 if self.scheme is Scheme.BIT_MASK else 2
        return self.rows * self.cols * per_element

    @property
    def compressed_size_bytes(self) -> int:
        """In-memory footprint: group metadata, codes, outliers, mask bits."""
        return packed_payload_bytes(
            self.scheme, self.rows, self.cols, self.group_size, self.outlier_count
        )

    @property
    def compression_ratio(self) -> float:
        return self.original_bytes / self.compressed_size_bytes

    def to_bytes(self) -> bytes:
        return serialize(self)


def packed_payload_bytes(
    scheme: Scheme, rows: int, cols: int, group_size: int, outlier_count: int = 0
) -> int:
    """Closed-form payload size in bytes; pure function of the header fields."""
    elements = rows * cols
    if scheme is Scheme.BIT_MASK:
        return (elements + 7) // 8
    groups = cols if group_size == PER_CHANNEL else -(-elements // group_size)
    per_group = 4 if scheme is Scheme.ASYMMETRIC_GROUP else 2
    size = per_group * groups + (elements + 1) // 2
    if scheme is Scheme.OUTLIER_SEPARATED:
        size += outlier_count * (4 + 2 * rows)
    return size


def outlier_separated_rate(
    rows: int, cols: int, outlier_count: int, group_size: int = DEFAULT_GROUP_SIZE
) -> float:
    """Compression rate (compressed/original) implied by an outlier count."""
    payload = packed_payload_bytes(Scheme.OUTLIER_SEPARATED, rows, cols, group_size, outlier_count)
    return payload / (2 * rows * cols)


def _as_half(x) -> np.ndarray:
    try:
        arr = np.asarray(x, dtype=np.float16)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"activation matrix must be numeric: {exc}") from exc
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"activation matrix must be 1-D or 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError("activation matrix must have at least one element")
    if not np.isfinite(arr).all():
        raise NonFiniteInputError(
            "activation values must be finite in half precision (NaN, infinity, or overflow found)"
        )
    return arr


def _check_group_size(group_size: int) -> None:
    if group_size != PER_CHANNEL and group_size < 1:
        raise ValidationError(f"group_size must be positive or PER_CHANNEL, got {group_size}")


def _grouped_view(x: np.ndarray, group_size: int) -> np.ndarray:
    """Rows of the result are quantization groups, in storage order."""
    if group_size == PER_CHANNEL:
        return x.T.astype(np.float64)
    flat = x.reshape(-1).astype(np.float64)
    groups = -(-flat.size // group_size)
    if flat.size < groups * group_size:
        # Pad the tail group by repeating its last element: min, max and
        # max-abs are all unaffected.
        flat = np.concatenate([flat, np.full(groups * group_size - flat.size, flat[-1])])
    return flat.reshape(groups, group_size)


def _store_scale(raw: np.ndarray) -> np.ndarray:
    """Round scales to what the wire holds (f16), dodging underflow to zero."""
    stored = raw.astype(np.float16)
    stored = np.where((stored == 0) & (raw > 0), _MIN_SCALE, stored)
    return stored.astype(np.float32)


def _pack_nibbles(codes: np.ndarray) -> bytes:
    u = codes.reshape(-1).astype(np.uint8) & 0x0F
    if u.size % 2:
        u = np.concatenate([u, np.zeros(1, np.uint8)])
    return (u[0::2] | (u[1::2] << 4)).tobytes()


def _unpack_nibbles(buf: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    nibbles = np.empty(raw.size * 2, dtype=np.uint8)
    nibbles[0::2] = raw & 0x0F
    nibbles[1::2] = raw >> 4
    codes = nibbles[:count].astype(np.int16)
    codes[codes >= 8] -= 16
    return codes.astype(np.int8)


def _quantize(x: np.ndarray, group_size: int, scheme: Scheme) -> CompressedTensor:
    grouped = _grouped_view(x, group_size)
    if scheme is Scheme.ASYMMETRIC_GROUP:
        hi = grouped.max(axis=1)
        lo = grouped.min(axis=1)
        offsets = ((hi + lo) / 2).astype(np.float16).astype(np.float32)
        scales = _store_scale((hi - lo) / 16)
        shifted = grouped - offsets.astype(np.float64)[:, None]
    else:
        top = np.abs(grouped).max(axis=1)
        offsets = None
        scales = _store_scale(top / 8)
        shifted = grouped
    denom = scales.astype(np.float64)
    denom = np.where(denom == 0, 1.0, denom)
    codes = np.clip(np.rint(shifted / denom[:, None]), -8, 7).astype(np.int8)
    if group_size != PER_CHANNEL:
        codes = codes.reshape(-1)[: x.size]
    return CompressedTensor(
        scheme=scheme,
        rows=x.shape[0],
        cols=x.shape[1],
        group_size=group_size,
        scales=scales,
        offsets=offsets,
        packed_codes=_pack_nibbles(codes),
    )


def quantize_symmetric(x, group_size: int = DEFAULT_GROUP_SIZE) -> CompressedTensor:
    """Quantize to 4-bit codes around zero, one scale per group.

    `group_size` counts elements of the row-major flattening; pass
    PER_CHANNEL for one group per column.
    """
    _check_group_size(group_size)
    return _quantize(_as_half(x), group_size, Scheme.SYMMETRIC_GROUP)


def quantize_asymmetric(x, group_size: int = DEFAULT_GROUP_SIZE) -> CompressedTensor:
    """Quantize with a per-group offset at the range midpoint."""
    _check_group_size(group_size)
    return _quantize(_as_half(x), group_size, Scheme.ASYMMETRIC_GROUP)


def dequantize(ct: CompressedTensor) -> np.ndarray:
    """Restore a float32 matrix from 4-bit codes.

    Outlier channels, when present, overwrite their quantized columns with
    the stored half-precision values exactly.
    """
    if ct.scheme is Scheme.BIT_MASK:
        raise ValidationError("bit masks are restored with unpack_bitmask")
    elements = ct.rows * ct.cols
    codes = _unpack_nibbles(ct.packed_codes, elements).astype(np.float64)
    scales = ct.scales.astype(np.float64)
    if ct.group_size == PER_CHANNEL:
        values = codes.reshape(ct.cols, ct.rows) * scales[:, None]
        if ct.offsets is not None:
            values += ct.offsets.astype(np.float64)[:, None]
        out = values.T
    else:
        group_of = np.arange(elements) // ct.group_size
        values = codes * scales[group_of]
        if ct.offsets is not None:
            values += ct.offsets.astype(np.float64)[group_of]
        out = values.reshape(ct.rows, ct.cols)
    out = np.ascontiguousarray(out).astype(np.float32)
    if ct.outlier_count:
        out[:, ct.outlier_indices] = ct.outlier_values.T.astype(np.float32)
    return out


def channel_abs_sums(x) -> np.ndarray:
    """Sum of absolute values per channel (column), in float64."""
    return np.abs(_as_half(x).astype(np.float64)).sum(axis=0)


def detect_outlier_channels(x, threshold: float = DEFAULT_Z_THRESHOLD) -> np.ndarray:
    """Indices of channels whose absolute sum is a one-sided z-score outlier.

    The z-score uses the population standard deviation over channels; when it
    is zero every channel is typical and nothing is flagged.
    """
    sums = channel_abs_sums(x)
    sigma = sums.std()
    if sigma == 0:
        return np.empty(0, dtype=np.int64)
    z = (sums - sums.mean()) / sigma
    return np.flatnonzero(z > threshold)


def compress_outlier_separated(
    x,
    group_size: int = DEFAULT_GROUP_SIZE,
    threshold: float = DEFAULT_Z_THRESHOLD,
) -> CompressedTensor:
    """Store outlier channels raw in f16 and symmetric-quantize the rest.

    Flagged columns are zeroed in a working copy before quantization so they
    cannot inflate group scales.  Refuses to proceed when more than half of
    all channels are flagged; that means the distribution assumption is wrong
    and a different scheme should be used.
    """
    _check_group_size(group_size)
    arr = _as_half(x)
    indices = detect_outlier_channels(arr, threshold)
    cols = arr.shape[1]
    if 2 * len(indices) > cols:
        raise TooManyOutliersError(
            f"{len(indices)} of {cols} channels flagged as outliers; refusing to compress"
        )
    work = arr.copy()
    work[:, indices] = 0
    base = _quantize(work, group_size, Scheme.SYMMETRIC_GROUP)
    return CompressedTensor(
        scheme=Scheme.OUTLIER_SEPARATED,
        rows=base.rows,
        cols=base.cols,
        group_size=base.group_size,
        scales=base.scales,
        offsets=None,
        packed_codes=base.packed_codes,
        outlier_indices=indices.astype(np.uint32),
        outlier_values=np.ascontiguousarray(arr[:, indices].T),
    )


def pack_bitmask(mask) -> CompressedTensor:
    """Pack a 0/1 byte mask eight-to-one, least significant bit first."""
    if isinstance(mask, (bytes, bytearray)):
        arr = np.frombuffer(bytes(mask), dtype=np.uint8)
    else:
        arr = np.asarray(mask)
    if arr.size == 0:
        raise ValidationError("mask must have at least one element")
    if arr.ndim > 2:
        raise ValidationError(f"mask must be 1-D or 2-D, got shape {arr.shape}")
    flat = arr.reshape(-1)
    if not np.isin(flat, (0, 1)).all():
        bad = flat[~np.isin(flat, (0, 1))][0]
        raise NonBinaryMaskError(f"mask bytes must be 0 or 1, found {bad!r}")
    rows, cols = arr.shape if arr.ndim == 2 else (1, arr.size)
    packed = np.packbits(flat.astype(np.uint8), bitorder="little").tobytes()
    return CompressedTensor(
        scheme=Scheme.BIT_MASK,
        rows=rows,
        cols=cols,
        group_size=0,
        scales=np.empty(0, dtype=np.float32),
        offsets=None,
        packed_codes=b"",
        mask_bits=packed,
    )


def unpack_bitmask(ct: CompressedTensor) -> np.ndarray:
    """Exact inverse of pack_bitmask; returns the 0/1 bytes in stored shape."""
    if ct.scheme is not Scheme.BIT_MASK:
        raise ValidationError(f"expected a bit mask, got {ct.scheme.name}")
    raw = np.frombuffer(ct.mask_bits, dtype=np.uint8)
    bits = np.unpackbits(raw, count=ct.rows * ct.cols, bitorder="little")
    return bits.reshape(ct.rows, ct.cols)


def compress(x, spec: SchemeSpec) -> CompressedTensor:
    """Compress with the given scheme; `x` is a mask for BIT_MASK."""
    if spec.scheme is Scheme.SYMMETRIC_GROUP:
        return quantize_symmetric(x, spec.group_size)
    if spec.scheme is Scheme.ASYMMETRIC_GROUP:
        return quantize_asymmetric(x, spec.group_size)
    if spec.scheme is Scheme.OUTLIER_SEPARATED:
        return compress_outlier_separated(x, spec.group_size, spec.z_threshold)
    return pack_bitmask(x)


def decompress(ct: CompressedTensor) -> np.ndarray:
    if ct.scheme is Scheme.BIT_MASK:
        return unpack_bitmask(ct)
    return dequantize(ct)


@dataclass(frozen=True)
class CodecReport:
    """Measured cost and benefit of one compression pass."""

    scheme: Scheme
    compress_ms: float
    decompress_ms: float
    ratio: float
    original_bytes: int
    compressed_bytes: int


def measure_codec(x, spec: SchemeSpec) -> CodecReport:
    """Time one compress/decompress cycle and report the achieved ratio.

    The ratio feeds OperatorProfile.compression_rate (as its reciprocal); the
    wall times feed compress_time_ms and decompress_time_ms.
    """
    start = time.perf_counter()
    ct = compress(x, spec)
    compress_ms = (time.perf_counter() - start) * 1000.0
    start = time.perf_counter()
    decompress(ct)
    decompress_ms = (time.perf_counter() - start) * 1000.0
    return CodecReport(
        scheme=spec.scheme,
        compress_ms=compress_ms,
        decompress_ms=decompress_ms,
        ratio=ct.compression_ratio,
        original_bytes=ct.original_bytes,
        compressed_bytes=ct.compressed_size_bytes,
    )


def serialize(ct: CompressedTensor) -> bytes:
    """Wire format: 25-byte header, group metadata, packed codes, outliers."""
    parts = [
        _HEADER.pack(
            MAGIC,
            int(ct.scheme),
            ct.rows,
            ct.cols,
            ct.group_size,
            ct.group_count,
            ct.outlier_count,
        )
    ]
    if ct.scheme is Scheme.BIT_MASK:
        parts.append(ct.mask_bits)
        return b"".join(parts)
    if ct.offsets is None:
        parts.append(ct.scales.astype("<f2").tobytes())
    else:
        meta = np.empty((ct.group_count, 2), dtype="<f2")
        meta[:, 0] = ct.scales
        meta[:, 1] = ct.offsets
        parts.append(meta.tobytes())
    parts.append(ct.packed_codes)
    if ct.outlier_count:
        parts.append(ct.outlier_indices.astype("<u4").tobytes())
        parts.append(ct.outlier_values.astype("<f2").tobytes())
    return b"".join(parts)


def deserialize(buf: bytes) -> CompressedTensor:
    """Parse and structurally validate the wire format."""
    if len(buf) < _HEADER.size:
        raise CorruptPayloadError(f"payload truncated: {len(buf)} bytes is shorter than the header")
    magic, scheme_raw, rows, cols, group_size, group_count, outlier_count = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptPayloadError(f"bad magic {magic!r}")
    try:
        scheme = Scheme(scheme_raw)
    except ValueError:
        raise CorruptPayloadError(f"unknown scheme byte {scheme_raw}") from None
    if rows < 1 or cols < 1:
        raise CorruptPayloadError(f"invalid shape {rows}x{cols}")
    if scheme is not Scheme.OUTLIER_SEPARATED and outlier_count:
        raise CorruptPayloadError(f"{scheme.name} cannot carry outliers")
    if 2 * outlier_count > cols:
        raise CorruptPayloadError(f"outlier count {outlier_count} exceeds half of {cols} channels")
    elements = rows * cols
    if scheme is Scheme.BIT_MASK:
        expected_groups = 0
    elif group_size == PER_CHANNEL:
        expected_groups = cols
    elif group_size >= 1:
        expected_groups = -(-elements // group_size)
    else:
        raise CorruptPayloadError(f"invalid group size {group_size}")
    if group_count != expected_groups:
        raise CorruptPayloadError(f"group count {group_count} does not match shape (want {expected_groups})")
    expected = _HEADER.size + packed_payload_bytes(scheme, rows, cols, group_size, outlier_count)
    if len(buf) != expected:
        raise CorruptPayloadError(f"payload size mismatch: expected {expected} bytes, got {len(buf)}")

    pos = _HEADER.size
    if scheme is Scheme.BIT_MASK:
        return CompressedTensor(
            scheme=scheme,
            rows=rows,
            cols=cols,
            group_size=0,
            scales=np.empty(0, dtype=np.float32),
            offsets=None,
            packed_codes=b"",
            mask_bits=buf[pos:],
        )
    if scheme is Scheme.ASYMMETRIC_GROUP:
        meta = np.frombuffer(buf, dtype="<f2", count=group_count * 2, offset=pos).reshape(-1, 2)
        scales = meta[:, 0].astype(np.float32)
        offsets = meta[:, 1].astype(np.float32)
        pos += 4 * group_count
    else:
        scales = np.frombuffer(buf, dtype="<f2", count=group_count, offset=pos).astype(np.float32)
        offsets = None
        pos += 2 * group_count
    if not np.isfinite(scales).all() or (scales < 0).any():
        raise CorruptPayloadError("scales must be finite and non-negative")
    if offsets is not None and not np.isfinite(offsets).all():
        raise CorruptPayloadError("offsets must be finite")
    code_bytes = (elements + 1) // 2
    packed_codes = buf[pos : pos + code_bytes]
    pos += code_bytes
    outlier_indices = None
    outlier_values = None
    if scheme is Scheme.OUTLIER_SEPARATED and outlier_count:
        outlier_indices = np.frombuffer(buf, dtype="<u4", count=outlier_count, offset=pos).astype(np.uint32)
        pos += 4 * outlier_count
        if (outlier_indices >= cols).any():
            raise CorruptPayloadError("outlier index out of range")
        if (np.diff(outlier_indices.astype(np.int64)) <= 0).any():
            raise CorruptPayloadError("outlier indices must be strictly increasing")
        outlier_values = (
            np.frombuffer(buf, dtype="<f2", count=outlier_count * rows, offset=pos)
            .reshape(outlier_count, rows)
            .copy()
        )
    return CompressedTensor(
        scheme=scheme,
        rows=rows,
        cols=cols,
        group_size=group_size,
        scales=scales,
        offsets=offsets,
        packed_codes=packed_codes,
        outlier_indices=outlier_indices,
        outlier_values=outlier_values,
    )
