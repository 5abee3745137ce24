"""Cross-field network inference: weight file I/O, input assembly, forward pass.

The network maps per-axis backward differences of the anchor fields to
predicted per-axis backward differences of the target field:

    h1 = relu(conv(x))                      c_in -> H, k^n kernel, zero pad
    h2 = relu(pointwise(depthwise(h1)))     H -> H
    a  = sigmoid(fc2(relu(fc1(avg))) + fc2(relu(fc1(max))))   shared MLP gate
    y  = conv(h2 * a) * out_scale + out_offset                H -> n

Numeric contract (mirrored by any trainer that wants its exported weights to
cross-check): activations and weights are float32; convolutions accumulate
in float32 starting from the bias, adding terms in (in-channel, row-major
kernel offset) order; pooled statistics and the attention MLP run in float64
and the gate is rounded to float32 before it scales the feature maps.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError, IntegrityError
from .fields import Field, backward_diff

MAGIC = b"CFW1"
VERSION = 1
NDT_MAGIC = b"NDT1"
CKV_MAGIC = b"CKV1"
NORM_SPAN = 300.0

_LAYER_KEYS = (
    "conv1_w", "conv1_b",
    "dw_w", "dw_b",
    "pw_w", "pw_b",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
    "conv2_w", "conv2_b",
)


@dataclass
class CfnnWeights:
    ndim: int
    c_in: int
    hidden: int
    reduction: int
    c_out: int
    k: int
    n_anchors: int
    in_norm: np.ndarray  # (c_in, 2) float32: offset, scale
    out_norm: np.ndarray  # (c_out, 2) float32
    params: dict[str, np.ndarray]  # float32 arrays keyed by _LAYER_KEYS

    def shapes(self) -> dict[str, tuple[int, ...]]:
        kk = (self.k,) * self.ndim
        h, r = self.hidden, self.reduction
        return {
            "conv1_w": (h, self.c_in) + kk, "conv1_b": (h,),
            "dw_w": (h,) + kk, "dw_b": (h,),
            "pw_w": (h, h), "pw_b": (h,),
            "fc1_w": (h // r, h), "fc1_b": (h // r,),
            "fc2_w": (h, h // r), "fc2_b": (h,),
            "conv2_w": (self.c_out, h) + kk, "conv2_b": (self.c_out,),
        }

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def validate(self) -> None:
        if self.ndim not in (2, 3):
            raise FormatError(f"ndim must be 2 or 3, got {self.ndim}")
        if self.c_out != self.ndim:
            raise FormatError(f"c_out ({self.c_out}) must equal ndim ({self.ndim})")
        if self.c_in != self.n_anchors * self.ndim:
            raise FormatError(
                f"c_in ({self.c_in}) must equal n_anchors*ndim ({self.n_anchors}*{self.ndim})"
            )
        if self.hidden <= 0 or self.reduction <= 0 or self.hidden % self.reduction != 0:
            raise FormatError(f"hidden ({self.hidden}) must be divisible by reduction ({self.reduction})")
        if self.k < 1 or self.k % 2 == 0:
            raise FormatError(f"kernel size must be odd and positive, got {self.k}")
        for norm, n in ((self.in_norm, self.c_in), (self.out_norm, self.c_out)):
            if norm.shape != (n, 2):
                raise FormatError("normalization parameter block has the wrong shape")
            if not np.isfinite(norm).all():
                raise FormatError("normalization parameters must be finite")
            if (norm[:, 1] <= 0).any():
                raise FormatError("normalization scales must be positive")
        for key, shape in self.shapes().items():
            p = self.params.get(key)
            if p is None or p.shape != shape:
                got = None if p is None else p.shape
                raise FormatError(f"parameter '{key}' has shape {got}, expected {shape}")
            if not np.isfinite(p).all():
                raise FormatError(f"parameter '{key}' contains non-finite values")


def zero_weights(ndim: int, n_anchors: int, hidden: int = 16, reduction: int = 4,
                 k: int = 3) -> CfnnWeights:
    """All-zero parameters with identity normalization; forward output is 0."""
    w = CfnnWeights(
        ndim=ndim,
        c_in=n_anchors * ndim,
        hidden=hidden,
        reduction=reduction,
        c_out=ndim,
        k=k,
        n_anchors=n_anchors,
        in_norm=np.tile(np.array([0.0, 1.0], dtype=np.float32), (n_anchors * ndim, 1)),
        out_norm=np.tile(np.array([0.0, 1.0], dtype=np.float32), (ndim, 1)),
        params={},
    )
    w.params = {key: np.zeros(shape, dtype=np.float32) for key, shape in w.shapes().items()}
    w.validate()
    return w


def write_weights(w: CfnnWeights, path: str) -> bytes:
    """Serialize to the CFW1 format (little-endian, trailing CRC32)."""
    w.validate()
    out = [struct.pack("<4sIBHHHHHH", MAGIC, VERSION, w.ndim, w.c_in, w.hidden,
                       w.reduction, w.c_out, w.k, w.n_anchors)]
    out.append(np.ascontiguousarray(w.in_norm, dtype="<f4").tobytes())
    out.append(np.ascontiguousarray(w.out_norm, dtype="<f4").tobytes())
    for key in _LAYER_KEYS:
        arr = np.ascontiguousarray(w.params[key], dtype="<f4")
        out.append(struct.pack("<Q", arr.size))
        out.append(arr.tobytes())
    body = b"".join(out)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    if path:
        with open(path, "wb") as f:
            f.write(blob)
    return blob


def load_weights(path_or_bytes) -> CfnnWeights:
    """Parse and validate a CFW1 file; CRC and shape mismatches are fatal."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            blob = f.read()
    head_fmt = "<4sIBHHHHHH"
    head_size = struct.calcsize(head_fmt)
    if len(blob) < head_size + 4:
        raise FormatError("weight file truncated")
    magic, version, ndim, c_in, hidden, reduction, c_out, k, n_anchors = struct.unpack_from(
        head_fmt, blob, 0
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    body = blob[:-4]

    w = CfnnWeights(
        ndim=ndim, c_in=c_in, hidden=hidden, reduction=reduction, c_out=c_out,
        k=k, n_anchors=n_anchors,
        in_norm=np.zeros((c_in, 2), np.float32),
        out_norm=np.zeros((c_out, 2), np.float32),
        params={},
    )
    if ndim not in (2, 3) or hidden <= 0 or reduction <= 0 or hidden % reduction != 0:
        raise FormatError("inconsistent architecture header")
    pos = head_size

    def take_f32(n: int) -> np.ndarray:
        nonlocal pos
        nbytes = 4 * n
        if pos + nbytes > len(body):
            raise FormatError("weight file truncated")
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=pos).astype(np.float32)
        pos += nbytes
        return arr

    w.in_norm = take_f32(2 * c_in).reshape(c_in, 2)
    w.out_norm = take_f32(2 * c_out).reshape(c_out, 2)
    for key, shape in w.shapes().items():
        if pos + 8 > len(body):
            raise FormatError("weight file truncated")
        (count,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        expected = int(np.prod(shape))
        if count != expected:
            raise FormatError(f"parameter '{key}' stores {count} values, expected {expected}")
        w.params[key] = take_f32(expected).reshape(shape)
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes in weight file")
    crc_stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise IntegrityError("weight file CRC32 mismatch")
    w.validate()
    return w


def build_input_tensor(anchors: list[Field], w: CfnnWeights) -> np.ndarray:
    """Stack normalized per-axis backward diffs of the anchors, anchor-major."""
    if len(anchors) != w.n_anchors:
        raise ArgumentError(f"model expects {w.n_anchors} anchors, got {len(anchors)}")
    dims = anchors[0].dims
    for a in anchors:
        if a.dims != dims:
            raise ArgumentError(f"anchor '{a.name}' dims {a.dims} do not match {dims}")
        if a.ndim != w.ndim:
            raise ArgumentError(f"anchor '{a.name}' is {a.ndim}-d, model is {w.ndim}-d")
    x = np.empty((w.c_in,) + dims, dtype=np.float32)
    ch = 0
    for a in anchors:
        data32 = a.data.astype(np.float32, copy=False)
        for axis in range(w.ndim):
            d = backward_diff(data32, axis).data
            off, scale = w.in_norm[ch]
            x[ch] = (d - off) / scale
            ch += 1
    return x


def _conv_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded float32 convolution with the pinned accumulation order."""
    c_out, c_in = weight.shape[0], weight.shape[1]
    dims = x.shape[1:]
    p = k // 2
    xp = np.pad(x, [(0, 0)] + [(p, p)] * len(dims))
    wflat = weight.reshape(c_out, c_in, -1)
    offsets = list(np.ndindex(*((k,) * len(dims))))
    out = np.empty((c_out,) + dims, dtype=np.float32)
    for co in range(c_out):
        acc = np.full(dims, bias[co], dtype=np.float32)
        for ci in range(c_in):
            xc = xp[ci]
            for oi, off in enumerate(offsets):
                view = xc[tuple(slice(o, o + d) for o, d in zip(off, dims))]
                acc += wflat[co, ci, oi] * view
        out[co] = acc
    return out


def _depthwise_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, k: int) -> np.ndarray:
    c = x.shape[0]
    dims = x.shape[1:]
    p = k // 2
    xp = np.pad(x, [(0, 0)] + [(p, p)] * len(dims))
    wflat = weight.reshape(c, -1)
    offsets = list(np.ndindex(*((k,) * len(dims))))
    out = np.empty_like(x)
    for ch in range(c):
        acc = np.full(dims, bias[ch], dtype=np.float32)
        xc = xp[ch]
        for oi, off in enumerate(offsets):
            view = xc[tuple(slice(o, o + d) for o, d in zip(off, dims))]
            acc += wflat[ch, oi] * view
        out[ch] = acc
    return out


def _pointwise(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    c_out = weight.shape[0]
    out = np.empty((c_out,) + x.shape[1:], dtype=np.float32)
    for co in range(c_out):
        acc = np.full(x.shape[1:], bias[co], dtype=np.float32)
        for ci in range(x.shape[0]):
            acc += weight[co, ci] * x[ci]
        out[co] = acc
    return out


def _attention_gate(h: np.ndarray, w: CfnnWeights) -> np.ndarray:
    """Channel gate in (0,1): shared MLP over avg- and max-pooled features."""
    c = h.shape[0]
    flat = h.reshape(c, -1)
    avg = flat.sum(axis=1, dtype=np.float64) / flat.shape[1]
    mx = flat.max(axis=1).astype(np.float64)
    fc1_w = w.params["fc1_w"].astype(np.float64)
    fc1_b = w.params["fc1_b"].astype(np.float64)
    fc2_w = w.params["fc2_w"].astype(np.float64)
    fc2_b = w.params["fc2_b"].astype(np.float64)

    def mlp(v: np.ndarray) -> np.ndarray:
        z = np.maximum(fc1_w @ v + fc1_b, 0.0)
        return fc2_w @ z + fc2_b

    logits = mlp(avg) + mlp(mx)
    gate = 1.0 / (1.0 + np.exp(-logits))
    return gate.astype(np.float32)


def forward(w: CfnnWeights, x: np.ndarray) -> np.ndarray:
    """Predicted target diffs per axis, denormalized to value units (float32)."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != w.ndim + 1 or x.shape[0] != w.c_in:
        raise ArgumentError(
            f"input tensor must be ({w.c_in}, *spatial dims), got shape {x.shape}"
        )
    h1 = np.maximum(_conv_same(x, w.params["conv1_w"], w.params["conv1_b"], w.k), np.float32(0))
    h2 = _depthwise_same(h1, w.params["dw_w"], w.params["dw_b"], w.k)
    h2 = np.maximum(_pointwise(h2, w.params["pw_w"], w.params["pw_b"]), np.float32(0))
    gate = _attention_gate(h2, w)
    h3 = h2 * gate.reshape((-1,) + (1,) * w.ndim)
    y = _conv_same(h3, w.params["conv2_w"], w.params["conv2_b"], w.k)
    out = np.empty_like(y)
    for ch in range(w.c_out):
        off, scale = w.out_norm[ch]
        out[ch] = y[ch] * scale + off
    return out


def minmax_norm_params(channels: np.ndarray, span: float = NORM_SPAN) -> np.ndarray:
    """(offset, scale) per channel mapping [min, max] onto [0, span]."""
    c = channels.shape[0]
    norm = np.empty((c, 2), dtype=np.float32)
    for ch in range(c):
        lo = float(channels[ch].min())
        hi = float(channels[ch].max())
        scale = (hi - lo) / span if hi > lo else 1.0
        norm[ch] = (lo, scale)
    return norm


def export_training_tensors(anchors: list[Field], target: Field, path: str,
                            span: float = NORM_SPAN) -> bytes:
    """Write an NDT1 tensor file of normalized anchor and target diff channels.

    Built from ORIGINAL data so the trained model captures the true field
    relationship and stays valid across error bounds.
    """
    dims = target.dims
    ndim = target.ndim
    for a in anchors:
        if a.dims != dims:
            raise ArgumentError(f"anchor '{a.name}' dims {a.dims} do not match target dims {dims}")
    c_in = len(anchors) * ndim
    c_target = ndim
    raw = np.empty((c_in + c_target,) + dims, dtype=np.float32)
    ch = 0
    for a in anchors:
        data32 = a.data.astype(np.float32, copy=False)
        for axis in range(ndim):
            raw[ch] = backward_diff(data32, axis).data
            ch += 1
    t32 = target.data.astype(np.float32, copy=False)
    for axis in range(ndim):
        raw[ch] = backward_diff(t32, axis).data
        ch += 1

    norm = minmax_norm_params(raw, span)
    data = np.empty_like(raw)
    for ch in range(raw.shape[0]):
        data[ch] = (raw[ch] - norm[ch, 0]) / norm[ch, 1]

    out = [struct.pack("<4sB", NDT_MAGIC, ndim)]
    out.append(struct.pack(f"<{ndim}Q", *dims))
    out.append(struct.pack("<II", c_in, c_target))
    out.append(np.ascontiguousarray(norm, dtype="<f4").tobytes())
    out.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    blob = b"".join(out)
    if path:
        with open(path, "wb") as f:
            f.write(blob)
    return blob


def read_training_tensors(path_or_bytes):
    """Parse an NDT1 file -> (input channels, target channels, norm params)."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            blob = f.read()
    if len(blob) < 5 or blob[:4] != NDT_MAGIC:
        raise FormatError("not an NDT1 tensor file")
    ndim = blob[4]
    if ndim not in (2, 3):
        raise FormatError(f"bad ndim {ndim} in tensor file")
    pos = 5
    dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
    pos += 8 * ndim
    c_in, c_target = struct.unpack_from("<II", blob, pos)
    pos += 8
    c_total = c_in + c_target
    norm = np.frombuffer(blob, dtype="<f4", count=2 * c_total, offset=pos).reshape(c_total, 2)
    pos += 8 * c_total
    n = int(np.prod(dims))
    data = np.frombuffer(blob, dtype="<f4", count=c_total * n, offset=pos)
    if pos + 4 * c_total * n != len(blob):
        raise FormatError("tensor file size mismatch")
    data = data.reshape((c_total,) + tuple(dims))
    return data[:c_in].copy(), data[c_in:].copy(), norm.astype(np.float32)


def read_check_vectors(path_or_bytes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parse a CKV1 golden-vector file -> [(input tensor, expected output), ...]."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            blob = f.read()
    if len(blob) < 8 or blob[:4] != CKV_MAGIC:
        raise FormatError("not a CKV1 vector file")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    vectors = []
    for _ in range(count):
        ndim = blob[pos]
        pos += 1
        if ndim not in (2, 3):
            raise FormatError("bad ndim in vector file")
        dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        c_in, c_out = struct.unpack_from("<II", blob, pos)
        pos += 8
        n = int(np.prod(dims))
        x = np.frombuffer(blob, dtype="<f4", count=c_in * n, offset=pos)
        pos += 4 * c_in * n
        y = np.frombuffer(blob, dtype="<f4", count=c_out * n, offset=pos)
        pos += 4 * c_out * n
        vectors.append((
            x.reshape((c_in,) + tuple(dims)).copy(),
            y.reshape((c_out,) + tuple(dims)).copy(),
        ))
    if pos != len(blob):
        raise FormatError("trailing bytes in vector file")
    return vectors
