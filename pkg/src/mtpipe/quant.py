"""Per-tensor dynamic 8-bit quantization of checkpoints.

Each quantized tensor is stored as its 8-bit codes under the original name
plus a scalar float32 companion named ``<name>.scale``, so the container
format stays unchanged. The scale is ``amax / 448`` (1.0 for all-zero
tensors), which makes the largest-magnitude element exactly representable.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass

import numpy as np

from . import fp8
from .errors import ToolError
from .fp8 import NonFiniteInput, compute_scale
from .tensorio import Checkpoint, DType, Tensor, tensor_as_f64

SCALE_SUFFIX = ".scale"


class AlreadyQuantized(ToolError):
    pass


class NameCollision(ToolError):
    pass


@dataclass(frozen=True)
class QuantizedTensor:
    """8-bit codes plus the positive float32 scale that dequantizes them."""

    codes: Tensor
    scale: float

    def __post_init__(self) -> None:
        if self.codes.dtype is not DType.F8_E4M3:
            raise ValueError("codes tensor must carry 8-bit float payload")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")


@dataclass(frozen=True)
class QuantPolicy:
    """Glob patterns naming tensors to leave at source precision."""

    skip_patterns: tuple[str, ...] = ()

    def skips(self, name: str) -> bool:
        return any(fnmatch.fnmatchcase(name, pat) for pat in self.skip_patterns)


def quantize_fp8(t: Tensor) -> QuantizedTensor:
    """Quantize one tensor with a dynamic scale; shape is preserved.

    Raises AlreadyQuantized for 8-bit input and NonFiniteInput if any element
    is NaN or infinite.
    """
    if t.dtype is DType.F8_E4M3:
        raise AlreadyQuantized("tensor already carries 8-bit codes")
    values = tensor_as_f64(t)
    if values.size and not np.isfinite(values).all():
        raise NonFiniteInput("quantization requires finite elements")
    scale = float(np.float32(compute_scale(values)))
    codes = fp8.encode_array(values / scale)
    return QuantizedTensor(Tensor(DType.F8_E4M3, t.shape, codes.tobytes()), scale)


def dequantize_fp8(q: QuantizedTensor) -> Tensor:
    """Reconstruct a float32 tensor as decode(code) * scale."""
    values = fp8.decode_array(np.frombuffer(q.codes.data, dtype=np.uint8)) * q.scale
    return Tensor(DType.F32, q.codes.shape, values.astype("<f4").tobytes())


def _scale_tensor(scale: float) -> Tensor:
    return Tensor(DType.F32, (), np.float32(scale).tobytes())


def scale_of(t: Tensor) -> float:
    """Read the scale value out of a scalar float32 companion tensor."""
    return float(np.frombuffer(t.data, dtype="<f4")[0])


def quantize_checkpoint(ckpt: Checkpoint, policy: QuantPolicy) -> Checkpoint:
    """Quantize every tensor the policy does not skip; skipped tensors copy
    through verbatim. The policy is recorded in the output metadata."""
    out: dict[str, Tensor] = {}

    def insert(name: str, tensor: Tensor) -> None:
        if name in out:
            raise NameCollision(f"output name {name!r} produced twice")
        out[name] = tensor

    for name, t in ckpt.tensors.items():
        if policy.skips(name):
            insert(name, t)
            continue
        if f"{name}{SCALE_SUFFIX}" in ckpt.tensors:
            raise NameCollision(f"{name}{SCALE_SUFFIX!r} already exists in the input")
        q = quantize_fp8(t)
        insert(name, q.codes)
        insert(f"{name}{SCALE_SUFFIX}", _scale_tensor(q.scale))

    metadata = dict(ckpt.metadata)
    metadata["quantization"] = "fp8-e4m3-dynamic"
    metadata["quantization_skip"] = ",".join(policy.skip_patterns)
    return Checkpoint(tensors=out, metadata=metadata)


@dataclass(frozen=True)
class TensorAudit:
    """Post-conversion validation record for one quantized tensor."""

    name: str
    amax: float
    scale: float
    max_rel_err: float
    skipped: bool = False


def validate_quantization(
    original: Checkpoint, quantized: Checkpoint, policy: QuantPolicy
) -> list[TensorAudit]:
    """Audit dequantization error tensor by tensor.

    ``max_rel_err`` is taken over elements at or above ``scale * 2**-6``
    (the smallest normal magnitude); smaller elements see absolute rather
    than relative rounding and are excluded.
    """
    audits: list[TensorAudit] = []
    for name, t in original.tensors.items():
        values = tensor_as_f64(t)
        amax = float(np.max(np.abs(values))) if values.size else 0.0
        if policy.skips(name):
            audits.append(TensorAudit(name, amax, 1.0, 0.0, skipped=True))
            continue
        scale = scale_of(quantized.tensors[f"{name}{SCALE_SUFFIX}"])
        restored = tensor_as_f64(dequantize_fp8(QuantizedTensor(quantized.tensors[name], scale)))
        mask = np.abs(values) >= scale * 2.0**-6
        if mask.any():
            rel = np.abs(restored[mask] - values[mask]) / np.abs(values[mask])
            max_rel = float(rel.max())
        else:
            max_rel = 0.0
        audits.append(TensorAudit(name, amax, scale, max_rel))
    return audits
