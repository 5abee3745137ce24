"""Field containers, raw binary I/O, error-bound resolution, backward differences.

Raw files are headerless little-endian row-major binaries (the SDRBench
distribution format); dims and dtype come from the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, DegenerateFieldError, FormatError

DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise ArgumentError(f"unsupported dtype {arr.dtype}")


@dataclass
class Field:
    """An n-dimensional (n in {2,3}) array of scalars, slowest-varying dim first."""

    name: str
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data)
        if self.data.ndim not in (2, 3):
            raise ArgumentError(f"field '{self.name}': dims length must be 2 or 3, got {self.data.ndim}")
        if self.data.dtype not in (np.float32, np.float64):
            raise ArgumentError(f"field '{self.name}': dtype must be float32 or float64")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> str:
        return dtype_tag(self.data)

    @property
    def nbytes(self) -> int:
        return self.data.size * self.data.itemsize

    def value_range(self) -> float:
        return float(self.data.max()) - float(self.data.min())


@dataclass
class ErrorBoundSpec:
    """User-facing error bound: absolute value or fraction of the value range."""

    mode: str  # "abs" | "rel"
    value: float

    def __post_init__(self) -> None:
        if self.mode not in ("abs", "rel"):
            raise ArgumentError(f"error-bound mode must be 'abs' or 'rel', got {self.mode!r}")
        if not (self.value > 0):
            raise ArgumentError("error-bound value must be positive")


@dataclass
class DiffField:
    """First-order backward difference along one axis, ghost-zero boundary."""

    axis: int
    data: np.ndarray


def load_raw_field(path: str | Path, dims: tuple[int, ...], dtype: str) -> Field:
    """Load a raw binary field, validating size and finiteness."""
    path = Path(path)
    if dtype not in DTYPE_TAGS:
        raise ArgumentError(f"dtype must be one of {sorted(DTYPE_TAGS)}, got {dtype!r}")
    np_dtype = DTYPE_TAGS[dtype]
    n = int(np.prod(dims))
    expected = n * np_dtype.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{path}: file is {actual} bytes, expected {expected} "
            f"({'x'.join(map(str, dims))} {dtype})"
        )
    data = np.fromfile(path, dtype=np_dtype).reshape(dims)
    bad = ~np.isfinite(data)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), dims)
        raise DataError(f"{path}: non-finite value at index {tuple(int(i) for i in idx)}")
    return Field(name=path.stem, data=data.astype(data.dtype.newbyteorder("=")))


def store_raw_field(field: Field, path: str | Path) -> None:
    """Write a field back as a raw little-endian binary (inverse of load_raw_field)."""
    field.data.astype(DTYPE_TAGS[field.dtype]).tofile(str(path))


def resolve_error_bound(spec: ErrorBoundSpec, field: Field) -> float:
    """Resolve a bound spec to an absolute bound for one field."""
    if field.data.size == 0:
        raise ArgumentError(f"field '{field.name}' is empty")
    if spec.mode == "abs":
        return float(spec.value)
    rng = field.value_range()
    if rng <= 0:
        raise DegenerateFieldError(
            f"field '{field.name}': relative error bound needs a nonzero value range"
        )
    return float(spec.value) * rng


def backward_diff(field: Field | np.ndarray, axis: int) -> DiffField:
    """d[idx] = v[idx] - v[idx - e_axis]; first slice keeps v (ghost zero)."""
    data = field.data if isinstance(field, Field) else field
    if not (0 <= axis < data.ndim):
        raise ArgumentError(f"axis {axis} out of range for {data.ndim}-d field")
    d = np.diff(data, axis=axis, prepend=data.dtype.type(0))
    return DiffField(axis=axis, data=d)


def cumulative_undiff(diff: DiffField) -> np.ndarray:
    """Exact inverse of backward_diff in exact arithmetic (cumsum along the axis)."""
    return np.cumsum(diff.data, axis=diff.axis, dtype=diff.data.dtype)
