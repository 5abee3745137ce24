import glob
import struct

import numpy as np
import pytest

from conftest import FIXTURES
from xfcomp import cfnn
from xfcomp.errors import ArgumentError, FormatError, IntegrityError
from xfcomp.fields import Field


def random_weights(rng, ndim=2, n_anchors=1, hidden=4, reduction=2, scale=0.2):
    w = cfnn.zero_weights(ndim=ndim, n_anchors=n_anchors, hidden=hidden, reduction=reduction)
    for key, shape in w.shapes().items():
        w.params[key] = rng.normal(scale=scale, size=shape).astype(np.float32)
    return w


class TestWeightFile:
    def test_minimal_roundtrip_and_param_count(self, tmp_path):
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        # conv1 2*3*3*4+4, dw 3*3*4+4, pw 4*4+4, fc1 2*4+2, fc2 4*2+4, conv2 2*4*3*3+2
        assert w.param_count() == 76 + 40 + 20 + 10 + 12 + 74
        path = tmp_path / "w.cfw1"
        blob = cfnn.write_weights(w, str(path))
        assert path.read_bytes() == blob
        w2 = cfnn.load_weights(str(path))
        assert w2.param_count() == w.param_count()
        for key in w.params:
            assert np.array_equal(w2.params[key], w.params[key])

    def test_bitexact_roundtrip_random(self, tmp_path, rng):
        w = random_weights(rng, ndim=3, n_anchors=2, hidden=8, reduction=4)
        blob = cfnn.write_weights(w, "")
        assert cfnn.write_weights(cfnn.load_weights(blob), "") == blob

    def test_truncated_rejected(self, rng):
        blob = cfnn.write_weights(random_weights(rng), "")
        with pytest.raises(FormatError):
            cfnn.load_weights(blob[: len(blob) // 2])

    def test_crc_flip_rejected(self, rng):
        blob = bytearray(cfnn.write_weights(random_weights(rng), ""))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(IntegrityError):
            cfnn.load_weights(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            cfnn.load_weights(b"NOPE" + b"\x00" * 64)

    def test_divisibility_enforced(self):
        with pytest.raises(FormatError):
            cfnn.zero_weights(ndim=2, n_anchors=1, hidden=5, reduction=2)

    def test_header_mutation_caught(self, rng):
        # flipping c_in breaks either shape bookkeeping or the CRC
        blob = bytearray(cfnn.write_weights(random_weights(rng), ""))
        blob[9] ^= 0x01
        with pytest.raises((FormatError, IntegrityError)):
            cfnn.load_weights(bytes(blob))


class TestInputTensor:
    def test_channel_counts(self, rng):
        f = Field("a", rng.normal(size=(5, 6)).astype(np.float32))
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        assert cfnn.build_input_tensor([f], w).shape == (2, 5, 6)
        fields = [Field(n, rng.normal(size=(4, 5, 6)).astype(np.float32)) for n in "abc"]
        w3 = cfnn.zero_weights(ndim=3, n_anchors=3, hidden=4, reduction=2)
        assert cfnn.build_input_tensor(fields, w3).shape == (9, 4, 5, 6)

    def test_constant_anchor_identity_norm(self):
        f = Field("a", np.full((3, 4), 2.0, np.float32))
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        x = cfnn.build_input_tensor([f], w)
        assert np.all(x[0, 0, :] == 2.0)
        assert np.all(x[0, 1:, :] == 0.0)
        assert np.all(x[1, :, 0] == 2.0)
        assert np.all(x[1, :, 1:] == 0.0)

    def test_dims_mismatch(self, rng):
        w = cfnn.zero_weights(ndim=2, n_anchors=2, hidden=4, reduction=2)
        a = Field("a", rng.normal(size=(4, 4)).astype(np.float32))
        b = Field("b", rng.normal(size=(5, 4)).astype(np.float32))
        with pytest.raises(ArgumentError):
            cfnn.build_input_tensor([a, b], w)


class TestForward:
    def test_zero_weights_zero_output(self, rng):
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        x = rng.normal(size=(2, 6, 7)).astype(np.float32)
        assert np.all(cfnn.forward(w, x) == 0.0)

    def test_final_bias_passes_through_gate(self, rng):
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        w.params["conv2_b"] = np.array([1.5, -2.0], np.float32)
        x = rng.normal(size=(2, 5, 5)).astype(np.float32)
        y = cfnn.forward(w, x)
        assert np.all(y[0] == np.float32(1.5))
        assert np.all(y[1] == np.float32(-2.0))

    def test_output_dims_match_input(self, rng):
        w = random_weights(rng, ndim=3, n_anchors=1, hidden=4, reduction=2)
        for dims in [(1, 1, 1), (2, 3, 1), (5, 4, 6)]:
            x = rng.normal(size=(3,) + dims).astype(np.float32)
            assert cfnn.forward(w, x).shape == (3,) + dims

    def test_deterministic(self, rng):
        w = random_weights(rng, ndim=2, n_anchors=2, hidden=8, reduction=4)
        x = rng.normal(size=(4, 9, 9)).astype(np.float32)
        y1 = cfnn.forward(w, x)
        y2 = cfnn.forward(w, x)
        assert np.array_equal(y1, y2)

    def test_gate_strictly_inside_unit_interval(self, rng):
        # at the scale of normalized inputs; float sigmoid saturates beyond ~37
        w = random_weights(rng, ndim=2, n_anchors=1, hidden=8, reduction=2, scale=0.05)
        x = rng.normal(size=(2, 8, 8)).astype(np.float32)
        h1 = np.maximum(cfnn._conv_same(x, w.params["conv1_w"], w.params["conv1_b"], w.k), 0)
        h2 = cfnn._depthwise_same(h1, w.params["dw_w"], w.params["dw_b"], w.k)
        h2 = np.maximum(cfnn._pointwise(h2, w.params["pw_w"], w.params["pw_b"]), 0)
        gate = cfnn._attention_gate(h2, w)
        assert np.all(gate > 0.0) and np.all(gate < 1.0)

    def test_channel_mismatch(self, rng):
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        with pytest.raises(ArgumentError):
            cfnn.forward(w, rng.normal(size=(3, 4, 4)).astype(np.float32))

    def test_denormalization_applied_per_channel(self, rng):
        w = cfnn.zero_weights(ndim=2, n_anchors=1, hidden=4, reduction=2)
        w.out_norm = np.array([[1.0, 2.0], [-3.0, 0.5]], np.float32)
        x = rng.normal(size=(2, 4, 4)).astype(np.float32)
        y = cfnn.forward(w, x)
        assert np.all(y[0] == 1.0)
        assert np.all(y[1] == -3.0)


class TestTrainingExport:
    def test_channel_counting_and_roundtrip(self, tmp_path, rng):
        anchors = [Field(n, rng.normal(size=(4, 4)).astype(np.float32)) for n in "ab"]
        target = Field("t", rng.normal(size=(4, 4)).astype(np.float32))
        path = tmp_path / "t.ndt"
        blob = cfnn.export_training_tensors(anchors, target, str(path))
        assert path.stat().st_size == len(blob)
        x, y, norm = cfnn.read_training_tensors(str(path))
        assert x.shape == (4, 4, 4)
        assert y.shape == (2, 4, 4)
        assert norm.shape == (6, 2)
        # deterministic bytes across runs
        assert cfnn.export_training_tensors(anchors, target, "") == blob

    def test_normalized_span(self, rng):
        anchors = [Field("a", (rng.normal(size=(16, 16)) * 5).astype(np.float32))]
        target = Field("t", (rng.normal(size=(16, 16)) * 3).astype(np.float32))
        x, y, _ = cfnn.read_training_tensors(
            cfnn.export_training_tensors(anchors, target, "")
        )
        for ch in list(x) + list(y):
            assert ch.min() == pytest.approx(0.0, abs=1e-4)
            assert ch.max() == pytest.approx(300.0, rel=1e-4)


class TestCheckVectors:
    def test_fixture_pairs_cross_check(self):
        pairs = sorted(glob.glob(FIXTURES + "/*.ckv1"))
        assert pairs, "no golden-vector fixtures checked in"
        for vec_path in pairs:
            w = cfnn.load_weights(vec_path.replace(".ckv1", ".cfw1"))
            for x, expected in cfnn.read_check_vectors(vec_path):
                got = cfnn.forward(w, x)
                assert np.max(np.abs(got - expected)) <= 1e-5
