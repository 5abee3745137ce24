"""Lorenzo, directional cross-field, and hybrid prediction on prequant codes.

All predictors read integer codes with a ghost-zero boundary (out-of-range
neighbors are 0), so compression can evaluate them for the whole field at
once while decompression replays the identical arithmetic sequentially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError
from .quantize import PrequantField, round_half_away

RIDGE_LAMBDA = 1e-8
MAX_FIT_SAMPLES = 1 << 24


@dataclass
class HybridWeights:
    """Affine fusion of [lorenzo, axis0, ..., axis(n-1)] predictions."""

    weights: np.ndarray  # float64, length n+1
    bias: float

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise FitError("hybrid weights must be finite")

    def normalized_shares(self) -> np.ndarray:
        """|w_i| / sum|w|, for reporting which predictor dominates."""
        a = np.abs(self.weights)
        s = a.sum()
        return a / s if s > 0 else a


@dataclass
class PredictorBundle:
    """Everything the compression-side field predictor needs."""

    prequant: PrequantField
    diffs: list[np.ndarray]  # denormalized CFNN outputs, one per axis, value units


def shift_prev(q: np.ndarray, axis: int) -> np.ndarray:
    """Previous-neighbor codes along one axis, ghost zero at the boundary."""
    pad = [(0, 0)] * q.ndim
    pad[axis] = (1, 0)
    padded = np.pad(q, pad)
    sl = [slice(None)] * q.ndim
    sl[axis] = slice(0, q.shape[axis])
    return padded[tuple(sl)]


def lorenzo_predict_all(q: np.ndarray) -> np.ndarray:
    """Lorenzo prediction at every position from the true codes."""
    if q.ndim == 2:
        p = np.pad(q, ((1, 0), (1, 0)))
        return p[:-1, 1:] + p[1:, :-1] - p[:-1, :-1]
    p = np.pad(q, ((1, 0), (1, 0), (1, 0)))
    return (
        p[:-1, 1:, 1:] + p[1:, :-1, 1:] + p[1:, 1:, :-1]
        - p[:-1, :-1, 1:] - p[:-1, 1:, :-1] - p[1:, :-1, :-1]
        + p[:-1, :-1, :-1]
    )


def lorenzo_predict(q: np.ndarray, idx: tuple[int, ...]) -> int:
    """Point form of the Lorenzo predictor (plane/volume extrapolation)."""

    def at(*off: int) -> int:
        pos = tuple(i - o for i, o in zip(idx, off))
        if any(p < 0 for p in pos):
            return 0
        return int(q[pos])

    if q.ndim == 2:
        return at(1, 0) + at(0, 1) - at(1, 1)
    return (
        at(1, 0, 0) + at(0, 1, 0) + at(0, 0, 1)
        - at(1, 1, 0) - at(1, 0, 1) - at(0, 1, 1)
        + at(1, 1, 1)
    )


def crossfield_predict(q: np.ndarray, d_quant: int, idx: tuple[int, ...], axis: int) -> int:
    """Previous neighbor along `axis` plus the quantized predicted difference."""
    if idx[axis] == 0:
        return int(d_quant)
    pos = list(idx)
    pos[axis] -= 1
    return int(q[tuple(pos)]) + int(d_quant)


def quantize_diffs(diffs: list[np.ndarray], eb_abs: float) -> list[np.ndarray]:
    """Convert real-valued predicted differences to prequant units."""
    step = 2.0 * eb_abs
    return [round_half_away(d.astype(np.float64) / step) for d in diffs]


def assemble_predictions(q: np.ndarray, d_quant: list[np.ndarray]) -> list[np.ndarray]:
    """[lorenzo, crossfield_axis0, ...] evaluated at every position."""
    preds = [lorenzo_predict_all(q)]
    for axis, dq in enumerate(d_quant):
        preds.append(shift_prev(q, axis) + dq)
    return preds


def fuse_predictions(preds: list[np.ndarray], w: HybridWeights) -> np.ndarray:
    """Rounded affine fusion of the candidate predictions.

    Accumulation order (w0*p0, += w1*p1, ..., += bias, all float64) is fixed:
    the sequential decompression kernels replay it term by term and must
    produce bit-identical predictions.
    """
    acc = w.weights[0] * preds[0].astype(np.float64)
    for k in range(1, len(preds)):
        acc += w.weights[k] * preds[k].astype(np.float64)
    acc += w.bias
    return round_half_away(acc)


def hybrid_predict(preds, w: HybridWeights) -> int:
    """Point form of fuse_predictions."""
    arr = [np.asarray(p, dtype=np.int64) for p in preds]
    return int(fuse_predictions(arr, w))


def fit_hybrid_weights(predictions: np.ndarray, truth: np.ndarray) -> HybridWeights:
    """Least-squares fit of the fusion weights on (m x (n+1)) predictor outputs.

    Solves the ridge-regularized normal equations (lambda=1e-8) of the
    bias-augmented system, which picks the minimum-norm solution when the
    predictors are collinear.
    """
    X = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise FitError("predictions must be a 2-d sample matrix")
    m, k = X.shape
    if m < k + 1:
        raise FitError(f"need at least {k + 1} samples to fit {k} weights + bias, got {m}")
    Xa = np.hstack([X, np.ones((m, 1))])
    A = Xa.T @ Xa + RIDGE_LAMBDA * np.eye(k + 1)
    b = Xa.T @ y
    w = np.linalg.solve(A, b)
    return HybridWeights(weights=w[:-1], bias=float(w[-1]))


def fit_sample_stride(n_points: int) -> int:
    """Stride for subsampling the hybrid fit on very large fields."""
    if n_points <= MAX_FIT_SAMPLES:
        return 1
    return int(np.ceil(n_points / MAX_FIT_SAMPLES))


def predict_field_for_compression(bundle: PredictorBundle, w: HybridWeights) -> np.ndarray:
    """Postquantized deltas for the whole field under hybrid prediction."""
    q = bundle.prequant.codes
    dq = quantize_diffs(bundle.diffs, bundle.prequant.eb_abs)
    preds = assemble_predictions(q, dq)
    fused = fuse_predictions(preds, w)
    return np.subtract(q, fused, dtype=np.int64)
