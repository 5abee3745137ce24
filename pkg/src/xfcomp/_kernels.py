"""Numba kernels for the two inherently sequential paths.

Decompression of hybrid-predicted fields is a true scan (each point needs
already-reconstructed neighbors), and canonical Huffman decoding is a
bit-serial walk. Everything else in the package is vectorized numpy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def decode_canonical(stream, count, max_len, ln_count, first_code, first_rank, sym_of_rank):
    """Decode `count` canonical-Huffman symbols from a packed MSB-first stream.

    Returns (symbol indices, bit position after the last symbol, status):
    status 0 ok, 1 bitstream underrun, 2 no code within max_len.
    """
    out = np.empty(count, dtype=np.int32)
    nbits = stream.size * 8
    bitpos = 0
    for i in range(count):
        code = 0
        length = 0
        while True:
            if bitpos >= nbits:
                return out, bitpos, 1
            bit = (stream[bitpos >> 3] >> (7 - (bitpos & 7))) & 1
            bitpos += 1
            code = (code << 1) | bit
            length += 1
            if length > max_len:
                return out, bitpos, 2
            cnt = ln_count[length]
            if cnt > 0:
                fc = first_code[length]
                if code >= fc and code < fc + cnt:
                    out[i] = sym_of_rank[first_rank[length] + (code - fc)]
                    break
    return out, bitpos, 0


@njit(cache=True)
def scan_hybrid_2d(deltas, dq0, dq1, w, bias):
    """Sequential reconstruction of prequant codes under 2-d hybrid prediction.

    Term order of the fused sum must match predictors.fuse_predictions.
    """
    d0, d1 = deltas.shape
    q = np.zeros((d0, d1), dtype=np.int64)
    for i in range(d0):
        for j in range(d1):
            a = q[i - 1, j] if i > 0 else 0
            b = q[i, j - 1] if j > 0 else 0
            ab = q[i - 1, j - 1] if (i > 0 and j > 0) else 0
            lor = a + b - ab
            c0 = a + dq0[i, j]
            c1 = b + dq1[i, j]
            acc = w[0] * lor
            acc += w[1] * c0
            acc += w[2] * c1
            acc += bias
            r = math.floor(abs(acc) + 0.5)
            pred = -np.int64(r) if acc < 0 else np.int64(r)
            q[i, j] = pred + deltas[i, j]
    return q


@njit(cache=True)
def scan_hybrid_3d(deltas, dq0, dq1, dq2, w, bias):
    """Sequential reconstruction of prequant codes under 3-d hybrid prediction."""
    d0, d1, d2 = deltas.shape
    q = np.zeros((d0, d1, d2), dtype=np.int64)
    for i in range(d0):
        for j in range(d1):
            for k in range(d2):
                a = q[i - 1, j, k] if i > 0 else 0
                b = q[i, j - 1, k] if j > 0 else 0
                c = q[i, j, k - 1] if k > 0 else 0
                ab = q[i - 1, j - 1, k] if (i > 0 and j > 0) else 0
                ac = q[i - 1, j, k - 1] if (i > 0 and k > 0) else 0
                bc = q[i, j - 1, k - 1] if (j > 0 and k > 0) else 0
                abc = q[i - 1, j - 1, k - 1] if (i > 0 and j > 0 and k > 0) else 0
                lor = a + b + c - ab - ac - bc + abc
                c0 = a + dq0[i, j, k]
                c1 = b + dq1[i, j, k]
                c2 = c + dq2[i, j, k]
                acc = w[0] * lor
                acc += w[1] * c0
                acc += w[2] * c1
                acc += w[3] * c2
                acc += bias
                r = math.floor(abs(acc) + 0.5)
                pred = -np.int64(r) if acc < 0 else np.int64(r)
                q[i, j, k] = pred + deltas[i, j, k]
    return q
