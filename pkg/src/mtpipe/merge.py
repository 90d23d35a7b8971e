"""Spherical linear interpolation of two checkpoints, tensor by tensor.

Each pair of matching tensors is flattened, interpolated along the great
circle between the two element vectors, and re-encoded. All interpolation
arithmetic runs at float64 regardless of storage dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ToolError
from .tensorio import Checkpoint, DType, Tensor, tensor_as_f64, tensor_from_f64


class ShapeMismatch(ToolError):
    pass


class TOutOfRange(ToolError):
    pass


class MissingTensor(ToolError):
    pass


class MissingPolicy(Enum):
    """What to do with tensors present in only one input."""

    ERROR = "error"
    COPY = "copy"


@dataclass(frozen=True)
class MergeSpec:
    t: float = 0.5
    # Below this sin(angle), slerp coefficients are unstable and lerp is the
    # correct limit.
    parallel_eps: float = 1e-8
    name_policy: MissingPolicy = MissingPolicy.ERROR

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise TOutOfRange(f"t must lie in [0, 1], got {self.t}")
        if not self.parallel_eps > 0:
            raise ValueError("parallel_eps must be positive")


def slerp_vec(a: np.ndarray, b: np.ndarray, t: float, eps: float = 1e-8) -> np.ndarray:
    """Interpolate between two equal-length vectors along their arc.

    Falls back to linear interpolation when either vector is zero or the
    subtended angle is numerically degenerate (sin of the angle below eps),
    so antiparallel and near-parallel inputs never produce NaN.
    """
    if not 0.0 <= t <= 1.0:
        raise TOutOfRange(f"t must lie in [0, 1], got {t}")
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size == 0:
        raise ShapeMismatch(f"vector lengths {a.size} and {b.size}")

    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return (1.0 - t) * a + t * b
    cos_omega = float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))
    omega = float(np.arccos(cos_omega))
    sin_omega = float(np.sin(omega))
    if sin_omega < eps:
        return (1.0 - t) * a + t * b
    # Scalar coefficients first: at t=0 the pair is exactly (1, 0), so the
    # endpoint identities hold bitwise.
    coeff_a = float(np.sin((1.0 - t) * omega)) / sin_omega
    coeff_b = float(np.sin(t * omega)) / sin_omega
    return coeff_a * a + coeff_b * b


_WIDTH = {DType.F32: 4, DType.F16: 2, DType.BF16: 2}


def _output_dtype(da: DType, db: DType) -> DType:
    # 8-bit inputs are dequantized before merging, so they contribute float32.
    da = DType.F32 if da is DType.F8_E4M3 else da
    db = DType.F32 if db is DType.F8_E4M3 else db
    if da is db:
        return da
    if _WIDTH[da] != _WIDTH[db]:
        return da if _WIDTH[da] > _WIDTH[db] else db
    # Equal width but different layouts (F16 vs BF16): widen to F32 so
    # neither side loses range or precision.
    return DType.F32


def merge_checkpoints(x: Checkpoint, y: Checkpoint, spec: MergeSpec) -> Checkpoint:
    """Merge two checkpoints at the given interpolation weight.

    Matching tensors must agree on shape. Tensors present in only one input
    are an error under MissingPolicy.ERROR or copied verbatim under
    MissingPolicy.COPY. Output metadata records the interpolation weight.
    """
    out: dict[str, Tensor] = {}
    names = sorted(set(x.tensors) | set(y.tensors))
    for name in names:
        tx = x.tensors.get(name)
        ty = y.tensors.get(name)
        if tx is None or ty is None:
            if spec.name_policy is MissingPolicy.ERROR:
                side = "first" if tx is None else "second"
                raise MissingTensor(f"{name!r} missing from the {side} checkpoint")
            out[name] = tx if ty is None else ty
            continue
        if tx.shape != ty.shape:
            raise ShapeMismatch(
                f"{name!r}: {list(tx.shape)} vs {list(ty.shape)}"
            )
        dtype = _output_dtype(tx.dtype, ty.dtype)
        if tx.numel == 0:
            out[name] = Tensor(dtype, tx.shape, b"")
            continue
        merged = slerp_vec(tensor_as_f64(tx), tensor_as_f64(ty), spec.t, spec.parallel_eps)
        out[name] = tensor_from_f64(merged, dtype, tx.shape)

    metadata = dict(x.metadata)
    metadata.update(y.metadata)
    metadata["merge_t"] = repr(spec.t)
    return Checkpoint(tensors=out, metadata=metadata)
