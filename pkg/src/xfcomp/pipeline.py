"""End-to-end compression and decompression over a field plan.

Anchors are always compressed Lorenzo-only; their dequantized codes are the
exact values the decompressor will see, so both sides feed the cross-field
network bit-identical inputs and reproduce identical predictions.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import cfnn
from ._kernels import scan_hybrid_2d, scan_hybrid_3d
from .archive import Archive, ArchiveEntry, apply_backend, invert_backend, read_archive, write_archive
from .errors import FormatError, ManifestError
from .fields import Field, ErrorBoundSpec, load_raw_field, resolve_error_bound, store_raw_field
from .huffman import DEFAULT_RADIUS, CodeTable, build_code_table, decode_deltas, encode_deltas, histogram
from .manifest import CompressionPlan
from .predictors import (
    HybridWeights,
    assemble_predictions,
    fit_hybrid_weights,
    fit_sample_stride,
    fuse_predictions,
    lorenzo_predict_all,
    quantize_diffs,
)
from .quantize import PrequantField, dequantize, postquant_delta, prequantize


@dataclass
class FieldStats:
    name: str
    predictor: str
    dims: tuple[int, ...]
    eb_abs: float
    raw_bytes: int
    payload_bytes: int
    n_outliers: int
    entropy_bits: float
    q_digest: str
    n_exact: int = 0
    hybrid_weights: list[float] | None = None
    weight_shares: list[float] | None = None

    @property
    def cr(self) -> float:
        return self.raw_bytes / self.payload_bytes

    @property
    def bitrate(self) -> float:
        return 8.0 * self.payload_bytes / int(np.prod(self.dims))


def _digest(q: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(q, dtype="<i8").tobytes()).hexdigest()


def _hist_entropy(counts: np.ndarray) -> float:
    c = counts[counts > 0].astype(np.float64)
    p = c / c.sum()
    return float(-(p * np.log2(p)).sum())


def _pack_exact(pq: PrequantField) -> bytes:
    if not pq.exact_idx.size:
        return b""
    width = "<f4" if pq.src_dtype == "f32" else "<f8"
    return (struct.pack("<Q", pq.exact_idx.size)
            + pq.exact_idx.astype("<i8").tobytes()
            + pq.exact_raw.astype(width).tobytes())


def _unpack_exact(blob: bytes, dtype: str) -> tuple[np.ndarray, np.ndarray]:
    if not blob:
        return np.empty(0, np.int64), np.empty(0, np.float32 if dtype == "f32" else np.float64)
    (count,) = struct.unpack_from("<Q", blob, 0)
    width = "<f4" if dtype == "f32" else "<f8"
    idx = np.frombuffer(blob, dtype="<i8", count=count, offset=8).astype(np.int64)
    raw = np.frombuffer(blob, dtype=width, count=count, offset=8 + 8 * count)
    return idx, raw.astype(raw.dtype.newbyteorder("="))


def _encode_payload(deltas: np.ndarray, pq: PrequantField, backend: str,
                    radius: int) -> tuple[dict[str, bytes], np.ndarray]:
    counts = histogram(deltas, radius)
    table = build_code_table(counts, radius)
    bits, outliers = encode_deltas(deltas, table)
    streams = {
        "code_table": table.serialize(),
        "bitstream": apply_backend(bits, backend),
        "outliers": outliers.astype("<i8").tobytes(),
        "model": b"",
        "hweights": b"",
        "exact": _pack_exact(pq),
    }
    return streams, counts


def lorenzo_deltas_to_codes(deltas: np.ndarray) -> np.ndarray:
    """Invert Lorenzo postquant deltas: one cumulative sum per axis, exact."""
    q = deltas
    for axis in range(deltas.ndim):
        q = np.cumsum(q, axis=axis, dtype=np.int64)
    return q


def compress_field_lorenzo(field: Field, eb_abs: float, backend: str = "deflate",
                           radius: int = DEFAULT_RADIUS) -> tuple[dict[str, bytes], FieldStats, PrequantField]:
    pq = prequantize(field, eb_abs)
    pred = lorenzo_predict_all(pq.codes)
    deltas = postquant_delta(pq.codes, pred)
    streams, counts = _encode_payload(deltas, pq, backend, radius)
    stats = FieldStats(
        name=field.name,
        predictor="lorenzo",
        dims=field.dims,
        eb_abs=eb_abs,
        raw_bytes=field.nbytes,
        payload_bytes=sum(len(s) for s in streams.values()),
        n_outliers=int(counts[-1]),
        entropy_bits=_hist_entropy(counts),
        q_digest=_digest(pq.codes),
        n_exact=int(pq.exact_idx.size),
    )
    return streams, stats, pq


def compress_field_hybrid(field: Field, anchors_dec: list[Field], model_blob: bytes,
                          eb_abs: float, backend: str = "deflate",
                          radius: int = DEFAULT_RADIUS) -> tuple[dict[str, bytes], FieldStats, PrequantField]:
    """Cross-field + Lorenzo fusion; anchors_dec must be decompressed fields."""
    weights = cfnn.load_weights(model_blob)
    pq = prequantize(field, eb_abs)
    x = cfnn.build_input_tensor(anchors_dec, weights)
    d = cfnn.forward(weights, x)
    diffs = [d[axis] for axis in range(field.ndim)]
    dq = quantize_diffs(diffs, eb_abs)
    preds = assemble_predictions(pq.codes, dq)

    stride = fit_sample_stride(pq.codes.size)
    X = np.stack([p.ravel()[::stride] for p in preds], axis=1)
    hw = fit_hybrid_weights(X, pq.codes.ravel()[::stride])

    fused = fuse_predictions(preds, hw)
    deltas = postquant_delta(pq.codes, fused)
    streams, counts = _encode_payload(deltas, pq, backend, radius)
    streams["model"] = bytes(model_blob)
    streams["hweights"] = np.concatenate([hw.weights, [hw.bias]]).astype("<f8").tobytes()
    stats = FieldStats(
        name=field.name,
        predictor="hybrid",
        dims=field.dims,
        eb_abs=eb_abs,
        raw_bytes=field.nbytes,
        payload_bytes=sum(len(s) for s in streams.values()),
        n_outliers=int(counts[-1]),
        entropy_bits=_hist_entropy(counts),
        q_digest=_digest(pq.codes),
        n_exact=int(pq.exact_idx.size),
        hybrid_weights=[float(v) for v in hw.weights] + [float(hw.bias)],
        weight_shares=[float(v) for v in hw.normalized_shares()],
    )
    return streams, stats, pq


def decompress_entry(entry: ArchiveEntry, anchors_dec: list[Field] | None = None) -> tuple[Field, str]:
    """Reconstruct one field from its archive entry; returns (field, q digest)."""
    n = entry.n_points
    table = CodeTable.deserialize(entry.streams["code_table"])
    bits = invert_backend(entry.streams["bitstream"], entry.backend)
    outliers = np.frombuffer(entry.streams["outliers"], dtype="<i8")
    deltas = decode_deltas(bits, table, outliers, n).reshape(entry.dims)

    if entry.predictor == "lorenzo":
        q = lorenzo_deltas_to_codes(deltas)
    else:
        if not anchors_dec:
            raise FormatError(f"field '{entry.name}' needs decompressed anchors")
        weights = cfnn.load_weights(entry.streams["model"])
        hvec = entry.hybrid_weights_array()
        if hvec.size != len(entry.dims) + 2:
            raise FormatError(f"field '{entry.name}': hybrid weight vector has wrong length")
        hw = HybridWeights(weights=hvec[:-1], bias=float(hvec[-1]))
        x = cfnn.build_input_tensor(anchors_dec, weights)
        d = cfnn.forward(weights, x)
        dq = quantize_diffs([d[a] for a in range(len(entry.dims))], entry.eb_abs)
        if len(entry.dims) == 2:
            q = scan_hybrid_2d(deltas, dq[0], dq[1], hw.weights, hw.bias)
        else:
            q = scan_hybrid_3d(deltas, dq[0], dq[1], dq[2], hw.weights, hw.bias)

    exact_idx, exact_raw = _unpack_exact(entry.streams.get("exact", b""), entry.dtype)
    pq = PrequantField(name=entry.name, codes=q, eb_abs=entry.eb_abs, src_dtype=entry.dtype,
                       exact_idx=exact_idx, exact_raw=exact_raw)
    return dequantize(pq), _digest(q)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("XFC_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def run_plan(plan: CompressionPlan, eb_spec: ErrorBoundSpec, backend: str = "deflate",
             threads: int | None = None, use_crossfield: bool = True,
             radius: int = DEFAULT_RADIUS) -> tuple[bytes, list[FieldStats]]:
    """Compress every field of the plan into archive bytes (deterministic)."""
    threads = resolve_threads(threads)
    manifest = plan.manifest
    anchor_names = {a for e in plan.order for a in e.anchors}

    results: dict[str, tuple[ArchiveEntry, FieldStats]] = {}
    decompressed: dict[str, Field] = {}

    def do_plain(entry):
        fld = load_raw_field(manifest.resolve(entry.path), entry.dims, entry.dtype)
        fld.name = entry.name
        eb_abs = resolve_error_bound(eb_spec, fld)
        streams, stats, pq = compress_field_lorenzo(fld, eb_abs, backend, radius)
        arc = ArchiveEntry(
            name=entry.name, dims=entry.dims, dtype=entry.dtype,
            eb_mode=eb_spec.mode, eb_value=eb_spec.value, eb_abs=eb_abs,
            predictor="lorenzo", anchors=(), backend=backend, streams=streams,
        )
        dec = dequantize(pq) if entry.name in anchor_names else None
        return entry.name, arc, stats, dec

    def do_target(entry):
        fld = load_raw_field(manifest.resolve(entry.path), entry.dims, entry.dtype)
        fld.name = entry.name
        eb_abs = resolve_error_bound(eb_spec, fld)
        if use_crossfield:
            try:
                model_blob = manifest.resolve(entry.cfnn_path).read_bytes()
            except OSError as e:
                raise ManifestError(f"field '{entry.name}': cannot read cfnn weights: {e}") from e
            anchors_dec = [decompressed[a] for a in entry.anchors]
            streams, stats, _ = compress_field_hybrid(fld, anchors_dec, model_blob,
                                                      eb_abs, backend, radius)
            arc = ArchiveEntry(
                name=entry.name, dims=entry.dims, dtype=entry.dtype,
                eb_mode=eb_spec.mode, eb_value=eb_spec.value, eb_abs=eb_abs,
                predictor="hybrid", anchors=entry.anchors, backend=backend, streams=streams,
            )
        else:
            streams, stats, _ = compress_field_lorenzo(fld, eb_abs, backend, radius)
            arc = ArchiveEntry(
                name=entry.name, dims=entry.dims, dtype=entry.dtype,
                eb_mode=eb_spec.mode, eb_value=eb_spec.value, eb_abs=eb_abs,
                predictor="lorenzo", anchors=(), backend=backend, streams=streams,
            )
        return entry.name, arc, stats, None

    stage1 = [e for e in plan.order if e.role != "target"]
    stage2 = [e for e in plan.order if e.role == "target"]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for name, arc, stats, dec in pool.map(do_plain, stage1):
            results[name] = (arc, stats)
            if dec is not None:
                decompressed[name] = dec
        for name, arc, stats, _ in pool.map(do_target, stage2):
            results[name] = (arc, stats)

    ordered = [results[e.name] for e in plan.order]
    blob = write_archive([a for a, _ in ordered])
    return blob, [s for _, s in ordered]


def decompress_archive(archive: Archive | bytes, threads: int | None = None) -> dict[str, tuple[Field, str]]:
    """Decompress all fields, anchors before targets; returns name -> (field, q digest)."""
    if not isinstance(archive, Archive):
        archive = read_archive(archive)
    threads = resolve_threads(threads)
    names = {e.name for e in archive.entries}
    for e in archive.entries:
        for a in e.anchors:
            if a not in names:
                raise FormatError(f"field '{e.name}' references anchor '{a}' missing from archive")
            if archive.entry(a).predictor != "lorenzo":
                raise FormatError(f"anchor '{a}' of '{e.name}' is not Lorenzo-compressed")

    out: dict[str, tuple[Field, str]] = {}
    stage1 = [e for e in archive.entries if e.predictor == "lorenzo"]
    stage2 = [e for e in archive.entries if e.predictor != "lorenzo"]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for e, (fld, dig) in zip(stage1, pool.map(decompress_entry, stage1)):
            out[e.name] = (fld, dig)

        def do_target(e):
            anchors_dec = [out[a][0] for a in e.anchors]
            return decompress_entry(e, anchors_dec)

        for e, (fld, dig) in zip(stage2, pool.map(do_target, stage2)):
            out[e.name] = (fld, dig)
    return out


def run_decompress(archive: Archive | bytes, outdir, threads: int | None = None) -> dict[str, str]:
    """Decompress an archive to `<field>.<dtype>.raw` files in outdir."""
    if not isinstance(archive, Archive):
        archive = read_archive(archive)
    os.makedirs(outdir, exist_ok=True)
    fields = decompress_archive(archive, threads)
    paths = {}
    for e in archive.entries:
        fld, _ = fields[e.name]
        path = os.path.join(str(outdir), f"{e.name}.{e.dtype}.raw")
        store_raw_field(fld, path)
        paths[e.name] = path
    return paths


def plan_original_fields(plan: CompressionPlan) -> dict[str, Field]:
    """Load every original field named by the plan (for evaluation)."""
    out = {}
    for e in plan.order:
        fld = load_raw_field(plan.manifest.resolve(e.path), e.dims, e.dtype)
        fld.name = e.name
        out[e.name] = fld
    return out
