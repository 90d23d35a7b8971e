"""Bit-exact reader/writer for tensor checkpoint files.

Wire format: [8-byte little-endian u64 N][N bytes UTF-8 JSON header][data].
The header maps each tensor name to {"dtype", "shape", "data_offsets"}, with
offsets relative to the start of the data section, plus an optional
"__metadata__" string map. Writes are deterministic: tensor entries are
serialized with names in sorted order and payloads packed in that same order,
so two writes of the same checkpoint are byte-identical.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import fp8
from .errors import ToolError

# Defends against hostile length prefixes.
MAX_HEADER_BYTES = 100 * 1024 * 1024


class HeaderTooLarge(ToolError):
    pass


class MalformedHeader(ToolError):
    pass


class OffsetViolation(ToolError):
    pass


class UnsupportedDType(ToolError):
    pass


class EmptyName(ToolError):
    pass


class IoFailure(ToolError):
    pass


class DType(Enum):
    """Element type of a tensor payload."""

    F32 = "F32"
    F16 = "F16"
    BF16 = "BF16"
    F8_E4M3 = "F8_E4M3"

    @property
    def itemsize(self) -> int:
        return _ITEMSIZE[self]


_ITEMSIZE = {DType.F32: 4, DType.F16: 2, DType.BF16: 2, DType.F8_E4M3: 1}


@dataclass(frozen=True)
class Tensor:
    """Typed, shaped, little-endian row-major payload."""

    dtype: DType
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self) -> None:
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative extent in shape {self.shape}")
        expected = self.numel * self.dtype.itemsize
        if len(self.data) != expected:
            raise ValueError(
                f"payload is {len(self.data)} bytes, expected {expected} "
                f"for {self.dtype.value} {list(self.shape)}"
            )

    @property
    def numel(self) -> int:
        # Empty shape is a scalar: one element.
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return len(self.data)


@dataclass
class Checkpoint:
    """Named tensors plus free-form string metadata."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)


def tensor_as_f64(t: Tensor) -> np.ndarray:
    """Decode a tensor's payload to a flat float64 array, NaNs preserved."""
    if t.dtype is DType.F32:
        return np.frombuffer(t.data, dtype="<f4").astype(np.float64)
    if t.dtype is DType.F16:
        return np.frombuffer(t.data, dtype="<f2").astype(np.float64)
    if t.dtype is DType.BF16:
        bits = np.frombuffer(t.data, dtype="<u2").astype(np.uint32) << 16
        return bits.view(np.float32).astype(np.float64)
    if t.dtype is DType.F8_E4M3:
        return fp8.decode_array(np.frombuffer(t.data, dtype=np.uint8))
    raise UnsupportedDType(str(t.dtype))


def tensor_from_f64(values: np.ndarray, dtype: DType, shape: tuple[int, ...]) -> Tensor:
    """Encode a flat float64 array into a tensor payload of the given dtype.

    F32/F16 use the hardware round-to-nearest-even conversion, BF16 rounds the
    float32 bit pattern to nearest-even, F8 goes through the 8-bit codec. F16
    saturates at its largest finite magnitude rather than producing infinity.
    """
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if flat.size != math.prod(shape):
        raise ValueError(f"{flat.size} values cannot fill shape {list(shape)}")
    if dtype is DType.F32:
        data = flat.astype("<f4").tobytes()
    elif dtype is DType.F16:
        clipped = np.clip(flat, -65504.0, 65504.0)
        data = clipped.astype("<f2").tobytes()
    elif dtype is DType.BF16:
        f32 = flat.astype(np.float32)
        bits = f32.view(np.uint32)
        rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
        top = bits >> 16
        nan = np.isnan(f32)
        out = np.where(nan, top | 0x0040, rounded).astype("<u2")
        data = out.tobytes()
    elif dtype is DType.F8_E4M3:
        data = fp8.encode_array(flat).tobytes()
    else:
        raise UnsupportedDType(str(dtype))
    return Tensor(dtype, tuple(shape), data)


def _parse_header(blob: bytes) -> dict:
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    return header


def read_checkpoint(path: str | Path) -> Checkpoint:
    """Parse a checkpoint file, validating the offset table before returning.

    Raises HeaderTooLarge, MalformedHeader, OffsetViolation or
    UnsupportedDType; a malformed file never yields a partial checkpoint.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8:
        raise MalformedHeader("file shorter than the 8-byte length prefix")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if header_len > MAX_HEADER_BYTES or 8 + header_len > len(raw):
        raise HeaderTooLarge(f"declared header length {header_len} exceeds limits")
    header = _parse_header(raw[8 : 8 + header_len])
    data = raw[8 + header_len :]

    metadata_raw = header.pop("__metadata__", {})
    if not isinstance(metadata_raw, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata_raw.items()
    ):
        raise MalformedHeader("__metadata__ must map strings to strings")

    tensors: dict[str, Tensor] = {}
    spans: list[tuple[int, int, str]] = []
    for name, meta in header.items():
        if not name:
            raise MalformedHeader("tensor names must be non-empty")
        if not isinstance(meta, dict):
            raise MalformedHeader(f"entry for {name!r} is not an object")
        missing = {"dtype", "shape", "data_offsets"} - meta.keys()
        if missing:
            raise MalformedHeader(f"entry for {name!r} lacks {sorted(missing)}")
        try:
            dtype = DType(meta["dtype"])
        except ValueError as exc:
            raise UnsupportedDType(f"{name!r}: {meta['dtype']!r}") from exc
        shape = meta["shape"]
        if not isinstance(shape, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape
        ):
            raise MalformedHeader(f"entry for {name!r} has invalid shape {shape!r}")
        offsets = meta["data_offsets"]
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) and not isinstance(o, bool) for o in offsets)
        ):
            raise MalformedHeader(f"entry for {name!r} has invalid data_offsets")
        begin, end = offsets
        if not 0 <= begin <= end <= len(data):
            raise OffsetViolation(f"{name!r}: offsets [{begin}, {end}] out of range")
        expected = math.prod(shape) * dtype.itemsize
        if end - begin != expected:
            raise OffsetViolation(
                f"{name!r}: span {end - begin} bytes, dtype/shape need {expected}"
            )
        spans.append((begin, end, name))
        tensors[name] = Tensor(dtype, tuple(shape), data[begin:end])

    spans.sort()
    cursor = 0
    for begin, end, name in spans:
        if begin != cursor:
            kind = "overlap" if begin < cursor else "gap"
            raise OffsetViolation(f"{kind} at byte {begin} (tensor {name!r})")
        cursor = end
    if cursor != len(data):
        raise OffsetViolation(
            f"data buffer is {len(data)} bytes but offsets cover {cursor}"
        )

    return Checkpoint(tensors=tensors, metadata=dict(metadata_raw))


def write_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Serialize a checkpoint; rereading the file yields an equal checkpoint."""
    for name in ckpt.tensors:
        if not name:
            raise EmptyName("tensor names must be non-empty")

    names = sorted(ckpt.tensors)
    header: dict[str, object] = {}
    if ckpt.metadata:
        header["__metadata__"] = {k: ckpt.metadata[k] for k in sorted(ckpt.metadata)}
    offset = 0
    for name in names:
        t = ckpt.tensors[name]
        header[name] = {
            "dtype": t.dtype.value,
            "shape": list(t.shape),
            "data_offsets": [offset, offset + t.nbytes],
        }
        offset += t.nbytes

    header_bytes = json.dumps(header, ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for name in names:
                fh.write(ckpt.tensors[name].data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
