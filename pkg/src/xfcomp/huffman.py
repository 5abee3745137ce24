"""Customized canonical Huffman coding with an outlier ESCAPE symbol.

Residuals inside [-R, R) map onto a dense alphabet (index = delta + R); the
last alphabet slot is ESCAPE, which stands in for an out-of-band residual
stored verbatim in a side stream of raw little-endian int64 values.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import decode_canonical
from .errors import CorruptStreamError, FormatError

DEFAULT_RADIUS = 512
MAX_CODE_LEN = 60


@dataclass
class CodeTable:
    """Canonical Huffman code lengths over the clamped alphabet plus ESCAPE."""

    radius: int
    lengths: np.ndarray  # uint8, size 2*radius + 1; 0 = symbol absent
    _canon: dict = dc_field(default_factory=dict, repr=False)

    @property
    def n_symbols(self) -> int:
        return 2 * self.radius + 1

    @property
    def escape_index(self) -> int:
        return 2 * self.radius

    def canonical(self) -> dict:
        """Derived canonical structures (codes, per-length tables), cached."""
        if self._canon:
            return self._canon
        lengths = self.lengths
        present = np.nonzero(lengths)[0]
        if present.size == 0:
            raise FormatError("code table has no symbols")
        max_len = int(lengths[present].max())
        if max_len > MAX_CODE_LEN:
            raise FormatError(f"code length {max_len} exceeds limit {MAX_CODE_LEN}")
        order = present[np.argsort(lengths[present], kind="stable")]
        ln_count = np.zeros(max_len + 1, dtype=np.int64)
        for s in present:
            ln_count[lengths[s]] += 1
        first_code = np.zeros(max_len + 1, dtype=np.int64)
        first_rank = np.zeros(max_len + 1, dtype=np.int64)
        code = 0
        rank = 0
        for ln in range(1, max_len + 1):
            code <<= 1
            first_code[ln] = code
            first_rank[ln] = rank
            code += ln_count[ln]
            rank += ln_count[ln]
        if code > (1 << max_len):
            raise FormatError("code lengths violate the Kraft inequality")
        codes = np.zeros(self.n_symbols, dtype=np.uint64)
        next_code = first_code.copy()
        for s in order:
            codes[s] = next_code[lengths[s]]
            next_code[lengths[s]] += 1
        self._canon = {
            "max_len": max_len,
            "ln_count": ln_count,
            "first_code": first_code,
            "first_rank": first_rank,
            "sym_of_rank": order.astype(np.int32),
            "codes": codes,
        }
        return self._canon

    def code_of(self, symbol_index: int) -> tuple[int, int]:
        c = self.canonical()
        ln = int(self.lengths[symbol_index])
        if ln == 0:
            raise FormatError(f"symbol index {symbol_index} has no code")
        return int(c["codes"][symbol_index]), ln

    def serialize(self) -> bytes:
        """u32 radius, u32 pair count, then (u8 length, u32 run) RLE pairs."""
        runs: list[tuple[int, int]] = []
        lengths = self.lengths
        i = 0
        n = lengths.size
        while i < n:
            j = i
            while j < n and lengths[j] == lengths[i]:
                j += 1
            runs.append((int(lengths[i]), j - i))
            i = j
        out = [struct.pack("<II", self.radius, len(runs))]
        for ln, run in runs:
            out.append(struct.pack("<BI", ln, run))
        return b"".join(out)

    @classmethod
    def deserialize(cls, blob: bytes) -> "CodeTable":
        if len(blob) < 8:
            raise CorruptStreamError("code table blob truncated")
        radius, n_runs = struct.unpack_from("<II", blob, 0)
        n_symbols = 2 * radius + 1
        lengths = np.zeros(n_symbols, dtype=np.uint8)
        pos = 8
        at = 0
        for _ in range(n_runs):
            if pos + 5 > len(blob):
                raise CorruptStreamError("code table blob truncated")
            ln, run = struct.unpack_from("<BI", blob, pos)
            pos += 5
            if at + run > n_symbols:
                raise CorruptStreamError("code table runs exceed alphabet size")
            lengths[at : at + run] = ln
            at += run
        if at != n_symbols:
            raise CorruptStreamError("code table runs do not cover the alphabet")
        table = cls(radius=radius, lengths=lengths)
        table.canonical()  # validates Kraft and length limits up front
        return table


def histogram(deltas: np.ndarray, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    """Counts over the clamped alphabet; the last slot counts ESCAPE hits."""
    d = deltas.ravel()
    inband = (d >= -radius) & (d < radius)
    counts = np.zeros(2 * radius + 1, dtype=np.int64)
    counts[: 2 * radius] = np.bincount((d[inband] + radius).astype(np.int64), minlength=2 * radius)
    counts[2 * radius] = int((~inband).sum())
    return counts


def build_code_table(counts: np.ndarray, radius: int | None = None) -> CodeTable:
    """Deterministic Huffman over the observed symbols.

    Ties break toward the lower alphabet index; merged nodes queue behind
    leaves of equal weight in creation order.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if radius is None:
        radius = (counts.size - 1) // 2
    if counts.size != 2 * radius + 1:
        raise FormatError("histogram size does not match alphabet size")
    present = np.nonzero(counts)[0]
    if present.size == 0:
        raise FormatError("histogram is empty")
    lengths = np.zeros(counts.size, dtype=np.uint8)
    if present.size == 1:
        lengths[present[0]] = 1
        return CodeTable(radius=radius, lengths=lengths)

    heap: list[tuple[int, int, object]] = []
    for s in present:
        heap.append((int(counts[s]), int(s), int(s)))
    heapq.heapify(heap)
    tiebreak = counts.size
    while len(heap) > 1:
        f1, _, n1 = heapq.heappop(heap)
        f2, _, n2 = heapq.heappop(heap)
        heapq.heappush(heap, (f1 + f2, tiebreak, (n1, n2)))
        tiebreak += 1

    stack = [(heap[0][2], 0)]
    while stack:
        node, depth = stack.pop()
        if isinstance(node, tuple):
            stack.append((node[0], depth + 1))
            stack.append((node[1], depth + 1))
        else:
            lengths[node] = depth
    return CodeTable(radius=radius, lengths=lengths)


def encode_deltas(deltas: np.ndarray, table: CodeTable) -> tuple[bytes, np.ndarray]:
    """Pack residuals into (bitstream bytes, outlier int64 array)."""
    d = np.ascontiguousarray(deltas, dtype=np.int64).ravel()
    radius = table.radius
    inband = (d >= -radius) & (d < radius)
    sym = np.where(inband, d + radius, table.escape_index).astype(np.int64)
    outliers = d[~inband].copy()

    canon = table.canonical()
    code_lut = canon["codes"]
    len_lut = table.lengths.astype(np.uint8)
    lens = len_lut[sym]
    if (lens == 0).any():
        missing = int(sym[np.argmax(lens == 0)])
        raise FormatError(f"symbol index {missing} has no code in the table")
    if d.size == 0:
        return b"", outliers

    lens64 = lens.astype(np.int64)
    total = int(lens64.sum())
    starts = np.cumsum(lens64) - lens64
    owner = np.repeat(np.arange(d.size, dtype=np.int64), lens64)
    pos = np.arange(total, dtype=np.int64) - np.repeat(starts, lens64)
    shift = (lens64[owner] - 1 - pos).astype(np.uint64)
    bits = ((code_lut[sym[owner]] >> shift) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits).tobytes(), outliers


def decode_deltas(bitstream: bytes, table: CodeTable, outliers: np.ndarray, count: int) -> np.ndarray:
    """Exact inverse of encode_deltas; consumes outliers in scan order."""
    canon = table.canonical()
    stream = np.frombuffer(bitstream, dtype=np.uint8)
    sym, bitpos, status = decode_canonical(
        stream,
        count,
        canon["max_len"],
        canon["ln_count"],
        canon["first_code"],
        canon["first_rank"],
        canon["sym_of_rank"],
    )
    if status == 1:
        raise CorruptStreamError("bitstream underrun while decoding")
    if status == 2:
        raise CorruptStreamError("invalid code in bitstream")
    if (bitpos + 7) // 8 != stream.size:
        raise CorruptStreamError(
            f"bitstream length mismatch: consumed {(bitpos + 7) // 8} of {stream.size} bytes"
        )
    deltas = sym.astype(np.int64) - table.radius
    esc = sym == table.escape_index
    n_esc = int(esc.sum())
    outliers = np.asarray(outliers, dtype=np.int64)
    if n_esc != outliers.size:
        raise CorruptStreamError(f"outlier stream has {outliers.size} values, stream needs {n_esc}")
    if n_esc:
        deltas[esc] = outliers
    return deltas
