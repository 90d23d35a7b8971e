from __future__ import annotations

import numpy as np
import pytest

from mtpipe.tensorio import Checkpoint, DType, Tensor, tensor_from_f64

ALL_DTYPES = (DType.F32, DType.F16, DType.BF16, DType.F8_E4M3)


def random_tensor(rng: np.random.Generator, dtype: DType, max_dim: int = 6) -> Tensor:
    ndim = int(rng.integers(0, 3))
    shape = tuple(int(rng.integers(1, max_dim)) for _ in range(ndim))
    numel = int(np.prod(shape)) if shape else 1
    if dtype is DType.F8_E4M3:
        data = rng.integers(0, 256, size=numel, dtype=np.uint8).tobytes()
        return Tensor(dtype, shape, data)
    values = rng.uniform(-10.0, 10.0, size=numel)
    return tensor_from_f64(values, dtype, shape)


def random_checkpoint(rng: np.random.Generator, n_tensors: int | None = None) -> Checkpoint:
    if n_tensors is None:
        n_tensors = int(rng.integers(0, 6))
    tensors = {}
    for i in range(n_tensors):
        dtype = ALL_DTYPES[int(rng.integers(0, len(ALL_DTYPES)))]
        tensors[f"layer.{i}.weight"] = random_tensor(rng, dtype)
    metadata = {}
    if rng.random() < 0.5:
        metadata["format"] = "pt"
    return Checkpoint(tensors=tensors, metadata=metadata)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
