"""Dual quantization: value -> code lattice, then lossless prediction residuals.

Prequantization maps every value to the nearest multiple of 2*eb_abs, which
bounds the reconstruction error by eb_abs and removes the read-after-write
dependency: predictors run on the integer codes, and the postquantized
residuals are exact, so compression- and decompression-side predictions see
identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PrecisionError
from .fields import Field

_NP_DTYPES = {"f32": np.float32, "f64": np.float64}

CODE_LIMIT = 1 << 62


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero. Returns int64."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x).astype(np.int64)


@dataclass
class PrequantField:
    """Integer codes q = round(v / (2*eb_abs)) plus what dequantize needs.

    exact_idx/exact_raw patch the rare points where no code reconstructs
    within eb_abs in the emitted dtype (the float32 grid can sit up to half
    an ulp past the bound at lattice-gap midpoints); those raw source values
    overwrite the dequantized output, making the bound unconditional. The
    codes themselves stay as computed, so predictors are unaffected.
    """

    name: str
    codes: np.ndarray  # int64, shape == dims
    eb_abs: float
    src_dtype: str  # "f32" | "f64"
    exact_idx: np.ndarray = None  # int64 flat indices, optional
    exact_raw: np.ndarray = None  # source-dtype values, optional

    def __post_init__(self) -> None:
        if self.exact_idx is None:
            self.exact_idx = np.empty(0, dtype=np.int64)
        if self.exact_raw is None:
            self.exact_raw = np.empty(0, dtype=_NP_DTYPES[self.src_dtype])

    @property
    def dims(self) -> tuple[int, ...]:
        return self.codes.shape


def prequantize(field: Field, eb_abs: float) -> PrequantField:
    """Quantize a field onto the 2*eb_abs lattice (round half away from zero)."""
    if not (eb_abs > 0):
        raise PrecisionError("eb_abs must be positive")
    step = 2.0 * eb_abs
    v = field.data.astype(np.float64, copy=False)
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    if peak / step >= CODE_LIMIT:
        raise PrecisionError(
            f"field '{field.name}': error bound too small for value range "
            f"(|v|/2eb reaches {peak / step:.3g})"
        )
    q = round_half_away(v / step)

    # Quotient rounding can land one step off near ties, and casting the
    # reconstruction to the source dtype moves lattice points by up to half
    # an ulp; where the emitted value breaks the bound, adopt the
    # neighboring code if it reconstructs strictly closer.
    src = _NP_DTYPES[field.dtype]

    def emitted(codes: np.ndarray) -> np.ndarray:
        return (codes.astype(np.float64) * step).astype(src).astype(np.float64)

    err = v - emitted(q)
    over = np.abs(err) > eb_abs
    if over.any():
        current = q[over]
        candidate = current + np.sign(err[over]).astype(np.int64)
        improves = np.abs(emitted(candidate) - v[over]) < np.abs(err[over])
        current[improves] = candidate[improves]
        q[over] = current

    # Points still past the bound have no representable code at all; store
    # them verbatim and patch after dequantization.
    still_over = np.abs(v - emitted(q)) > eb_abs
    if still_over.any():
        idx = np.nonzero(still_over.ravel())[0].astype(np.int64)
        raw = field.data.ravel()[idx].astype(src)
    else:
        idx = raw = None
    return PrequantField(name=field.name, codes=q, eb_abs=float(eb_abs),
                         src_dtype=field.dtype, exact_idx=idx, exact_raw=raw)


def dequantize(pq: PrequantField) -> Field:
    """Reconstruct values from codes in the field's source dtype."""
    v = pq.codes.astype(np.float64) * (2.0 * pq.eb_abs)
    out = v.astype(_NP_DTYPES[pq.src_dtype])
    if pq.exact_idx.size:
        out.ravel()[pq.exact_idx] = pq.exact_raw
    return Field(name=pq.name, data=out)


def postquant_delta(q_actual, q_pred):
    """Residual of the integer-code prediction; exact in 64-bit arithmetic."""
    return np.subtract(q_actual, q_pred, dtype=np.int64)


def reconstruct(q_pred, delta):
    """Exact inverse of postquant_delta."""
    return np.add(q_pred, delta, dtype=np.int64)
