"""Quality and ratio metrics, plus rate-distortion sweeps.

CSV schema: field,eb_mode,eb_value,config,bitrate,psnr,cr,max_err
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateFieldError
from .fields import Field, ErrorBoundSpec
from .manifest import CompressionPlan
from .pipeline import decompress_archive, plan_original_fields, run_plan

CSV_HEADER = ["field", "eb_mode", "eb_value", "config", "bitrate", "psnr", "cr", "max_err"]


def max_abs_error(orig: Field, recon: Field) -> float:
    if orig.dims != recon.dims:
        raise ArgumentError(f"dims mismatch: {orig.dims} vs {recon.dims}")
    a = orig.data.astype(np.float64, copy=False)
    b = recon.data.astype(np.float64, copy=False)
    return float(np.max(np.abs(a - b)))


def psnr(orig: Field, recon: Field) -> float:
    """20*log10(range) - 10*log10(MSE), +inf when the reconstruction is exact."""
    if orig.dims != recon.dims:
        raise ArgumentError(f"dims mismatch: {orig.dims} vs {recon.dims}")
    rng = orig.value_range()
    if rng <= 0:
        raise DegenerateFieldError(f"field '{orig.name}' has zero value range")
    a = orig.data.astype(np.float64, copy=False)
    b = recon.data.astype(np.float64, copy=False)
    mse = float(np.mean((a - b) ** 2, dtype=np.float64))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(rng) - 10.0 * math.log10(mse)


def compression_ratio(original_bytes: int, compressed_bytes: int) -> float:
    if compressed_bytes <= 0:
        raise ArgumentError("compressed size must be positive")
    return original_bytes / compressed_bytes


def bitrate(compressed_bytes: int, n_points: int) -> float:
    return 8.0 * compressed_bytes / n_points


@dataclass
class MetricRow:
    field: str
    eb_mode: str
    eb_value: float
    config: str
    bitrate: float
    psnr: float
    cr: float
    max_err: float

    def as_list(self) -> list:
        return [self.field, self.eb_mode, f"{self.eb_value:g}", self.config,
                f"{self.bitrate:.6g}", f"{self.psnr:.6g}", f"{self.cr:.6g}", f"{self.max_err:.6g}"]


def evaluate_rows(plan: CompressionPlan, archive_blob: bytes, config: str | None = None,
                  threads: int | None = None) -> list[MetricRow]:
    """Per-field metrics of one archive against the plan's original fields."""
    from .archive import read_archive

    originals = plan_original_fields(plan)
    archive = read_archive(archive_blob)
    recon = decompress_archive(archive, threads=threads)
    rows = []
    for entry in archive.entries:
        orig = originals[entry.name]
        fld, _ = recon[entry.name]
        rows.append(MetricRow(
            field=entry.name,
            eb_mode=entry.eb_mode,
            eb_value=entry.eb_value,
            config=config or entry.predictor,
            bitrate=bitrate(entry.payload_bytes, entry.n_points),
            psnr=psnr(orig, fld),
            cr=compression_ratio(entry.raw_bytes, entry.payload_bytes),
            max_err=max_abs_error(orig, fld),
        ))
    return rows


def rate_distortion_sweep(plan: CompressionPlan, eb_specs: list[ErrorBoundSpec],
                          backend: str = "deflate", threads: int | None = None) -> list[MetricRow]:
    """Baseline (Lorenzo-only) and hybrid rows for every field at every bound."""
    rows: list[MetricRow] = []
    for spec in eb_specs:
        for use_crossfield, label in ((False, "lorenzo"), (True, "hybrid")):
            blob, _ = run_plan(plan, spec, backend=backend, threads=threads,
                               use_crossfield=use_crossfield)
            rows.extend(evaluate_rows(plan, blob, config=label, threads=threads))
    return rows


def write_csv(rows: list[MetricRow], fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_list())
