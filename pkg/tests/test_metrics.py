import io
import math

import numpy as np
import pytest

from conftest import FIXTURES, write_manifest
from synthdata import smooth_random_field
from xfcomp import cfnn
from xfcomp.errors import ArgumentError, DegenerateFieldError
from xfcomp.fields import ErrorBoundSpec, Field
from xfcomp.manifest import parse_manifest, validate_manifest
from xfcomp.metrics import (
    bitrate,
    compression_ratio,
    evaluate_rows,
    max_abs_error,
    psnr,
    rate_distortion_sweep,
    write_csv,
)
from xfcomp.pipeline import decompress_archive, run_plan


class TestMaxAbsError:
    def test_identical_is_zero(self, rng):
        f = Field("x", rng.normal(size=(4, 4)))
        assert max_abs_error(f, f) == 0.0

    def test_uniform_shift(self, rng):
        a = Field("x", rng.normal(size=(4, 4)))
        b = Field("x", a.data + 0.3)
        assert max_abs_error(a, b) == pytest.approx(0.3)

    def test_dims_mismatch(self):
        with pytest.raises(ArgumentError):
            max_abs_error(Field("a", np.zeros((2, 2))), Field("b", np.zeros((3, 2))))


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        f = Field("x", rng.normal(size=(5, 5)))
        assert math.isinf(psnr(f, f))

    def test_range_one_mse_1e6(self):
        orig = Field("x", np.array([[0.0, 1.0]] * 512, np.float64))
        recon = Field("x", orig.data + 1e-3)  # MSE = 1e-6
        assert psnr(orig, recon) == pytest.approx(60.0, abs=1e-9)

    def test_range_100_uniform_error(self):
        orig = Field("x", np.array([[0.0, 100.0]] * 8, np.float64))
        recon = Field("x", orig.data + 0.1)
        assert psnr(orig, recon) == pytest.approx(60.0, abs=1e-9)

    def test_zero_range_degenerate(self):
        f = Field("x", np.full((3, 3), 1.0))
        with pytest.raises(DegenerateFieldError):
            psnr(f, f)

    def test_monotone_in_error_bound(self, rng):
        f = smooth_random_field(rng, (24, 24), scale=10.0)
        f.name = "m"
        values = []
        for eb in (0.5, 0.1, 0.02, 0.004):
            from xfcomp.pipeline import compress_field_lorenzo, decompress_entry
            from xfcomp.archive import ArchiveEntry
            streams, _, _ = compress_field_lorenzo(f, eb)
            entry = ArchiveEntry(name="m", dims=f.dims, dtype="f32", eb_mode="abs",
                                 eb_value=eb, eb_abs=eb, predictor="lorenzo", streams=streams)
            rec, _ = decompress_entry(entry)
            values.append(psnr(f, rec))
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestRatios:
    def test_cr_example(self):
        assert compression_ratio(4000, 400) == 10.0

    def test_bitrate_example(self):
        # f32 data at CR 16 -> 2 bits per point
        n_points = 1000
        assert bitrate(4 * n_points // 16, n_points) == 2.0

    def test_model_blob_bytes_accounted(self):
        blob = open(FIXTURES + "/synth3d.cfw1", "rb").read()
        w = cfnn.load_weights(blob)
        assert len(blob) >= 4 * w.param_count()


def two_field_plan(tmp_path, rng):
    fields = {
        "base": smooth_random_field(rng, (16, 18), cutoff=0.4, scale=5.0),
        "tgt": smooth_random_field(rng, (16, 18), cutoff=0.5, scale=2.0),
    }
    for n, f in fields.items():
        f.name = n
    path = write_manifest(tmp_path, fields, [
        {"name": "base", "role": "anchor"},
        {"name": "tgt", "role": "target", "anchors": ["base"],
         "cfnn": FIXTURES + "/zero2d.cfw1"},
    ])
    return validate_manifest(parse_manifest(path))


class TestSweepAndEvaluate:
    def test_sweep_row_shape(self, tmp_path, rng):
        plan = two_field_plan(tmp_path, rng)
        rows = rate_distortion_sweep(plan, [ErrorBoundSpec("rel", 1e-3)])
        assert len(rows) == 4  # 2 fields x {lorenzo, hybrid}
        configs = {(r.field, r.config) for r in rows}
        assert ("tgt", "lorenzo") in configs and ("tgt", "hybrid") in configs

    def test_standard_eb_grid_runs(self, tmp_path, rng):
        plan = two_field_plan(tmp_path, rng)
        grid = [ErrorBoundSpec("rel", v) for v in (5e-3, 2e-3, 1e-3, 5e-4, 2e-4)]
        rows = rate_distortion_sweep(plan, grid)
        assert len(rows) == len(grid) * 4
        from xfcomp.pipeline import plan_original_fields
        ranges = {n: f.value_range() for n, f in plan_original_fields(plan).items()}
        for r in rows:
            assert r.max_err <= r.eb_value * ranges[r.field]

    def test_csv_schema(self, tmp_path, rng):
        plan = two_field_plan(tmp_path, rng)
        rows = rate_distortion_sweep(plan, [ErrorBoundSpec("abs", 0.01)])
        buf = io.StringIO()
        write_csv(rows, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "field,eb_mode,eb_value,config,bitrate,psnr,cr,max_err"
        assert len(lines) == 1 + len(rows)

    def test_baseline_and_hybrid_distortion_identical(self, tmp_path, rng):
        plan = two_field_plan(tmp_path, rng)
        spec = ErrorBoundSpec("rel", 1e-3)
        blob_h, _ = run_plan(plan, spec, use_crossfield=True)
        blob_l, _ = run_plan(plan, spec, use_crossfield=False)
        rec_h = decompress_archive(blob_h)
        rec_l = decompress_archive(blob_l)
        for name in ("base", "tgt"):
            assert np.array_equal(rec_h[name][0].data, rec_l[name][0].data)
        rows_h = evaluate_rows(plan, blob_h)
        rows_l = evaluate_rows(plan, blob_l)
        by = lambda rows: {r.field: r.psnr for r in rows}
        assert by(rows_h) == by(rows_l)
