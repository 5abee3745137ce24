"""XFC1 multi-field archive container and the pluggable lossless backend.

Every field entry carries five payload streams (code table, bitstream,
outliers, embedded model blob, hybrid weights); model bytes live inside the
archive and count against the compression ratio.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError

MAGIC = b"XFC1"
VERSION = 1

STREAM_KEYS = ("code_table", "bitstream", "outliers", "model", "hweights", "exact")

DTYPE_CODES = {"f32": 0, "f64": 1}
DTYPE_NAMES = {v: k for k, v in DTYPE_CODES.items()}
EB_MODE_CODES = {"abs": 0, "rel": 1}
EB_MODE_NAMES = {v: k for k, v in EB_MODE_CODES.items()}
PREDICTOR_CODES = {"lorenzo": 0, "hybrid": 1}
PREDICTOR_NAMES = {v: k for k, v in PREDICTOR_CODES.items()}
BACKEND_CODES = {"none": 0, "deflate": 1}
BACKEND_NAMES = {v: k for k, v in BACKEND_CODES.items()}

DEFLATE_LEVEL = 6


def apply_backend(data: bytes, mode: str) -> bytes:
    if mode == "none":
        return data
    if mode == "deflate":
        return zlib.compress(data, DEFLATE_LEVEL)
    raise FormatError(f"unknown lossless backend {mode!r}")


def invert_backend(data: bytes, mode: str) -> bytes:
    if mode == "none":
        return data
    if mode == "deflate":
        try:
            return zlib.decompress(data)
        except zlib.error as e:
            raise IntegrityError(f"backend stream corrupt: {e}") from e
    raise FormatError(f"unknown lossless backend {mode!r}")


@dataclass
class ArchiveEntry:
    name: str
    dims: tuple[int, ...]
    dtype: str
    eb_mode: str
    eb_value: float
    eb_abs: float
    predictor: str
    anchors: tuple[str, ...] = ()
    backend: str = "deflate"
    streams: dict[str, bytes] = dc_field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.dims))

    @property
    def raw_bytes(self) -> int:
        return self.n_points * (4 if self.dtype == "f32" else 8)

    @property
    def payload_bytes(self) -> int:
        return sum(len(self.streams.get(k, b"")) for k in STREAM_KEYS)

    def hybrid_weights_array(self) -> np.ndarray:
        return np.frombuffer(self.streams["hweights"], dtype="<f8").copy()


@dataclass
class Archive:
    entries: list[ArchiveEntry]

    def entry(self, name: str) -> ArchiveEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise FormatError(f"archive has no field '{name}'")


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"field name too long: {name[:32]}...")
    return struct.pack("<H", len(raw)) + raw


def _entry_header_size(e: ArchiveEntry) -> int:
    size = 2 + len(e.name.encode("utf-8"))
    size += 1 + 8 * len(e.dims)
    size += 1 + 1 + 8 + 8 + 1
    size += 1 + sum(2 + len(a.encode("utf-8")) for a in e.anchors)
    size += 1
    size += len(STREAM_KEYS) * (8 + 8 + 4)
    return size


def write_archive(entries: list[ArchiveEntry], path: str | Path | None = None) -> bytes:
    header_size = 12 + sum(_entry_header_size(e) for e in entries)
    offset = header_size
    out = [struct.pack("<4sII", MAGIC, VERSION, len(entries))]
    payloads: list[bytes] = []
    for e in entries:
        if e.dtype not in DTYPE_CODES or e.eb_mode not in EB_MODE_CODES:
            raise FormatError(f"entry '{e.name}': bad dtype or eb mode")
        out.append(_pack_name(e.name))
        out.append(struct.pack(f"<B{len(e.dims)}Q", len(e.dims), *e.dims))
        out.append(struct.pack(
            "<BBddB",
            DTYPE_CODES[e.dtype],
            EB_MODE_CODES[e.eb_mode],
            e.eb_value,
            e.eb_abs,
            PREDICTOR_CODES[e.predictor],
        ))
        out.append(struct.pack("<B", len(e.anchors)))
        for a in e.anchors:
            out.append(_pack_name(a))
        out.append(struct.pack("<B", BACKEND_CODES[e.backend]))
        for key in STREAM_KEYS:
            data = e.streams.get(key, b"")
            crc = zlib.crc32(data) & 0xFFFFFFFF
            out.append(struct.pack("<QQI", offset, len(data), crc))
            payloads.append(data)
            offset += len(data)
    blob = b"".join(out)
    if len(blob) != header_size:
        raise FormatError("internal error: header size mismatch")
    blob += b"".join(payloads)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def read_archive(path_or_bytes) -> Archive:
    """Parse an XFC1 archive, verifying every stream CRC."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        blob = Path(path_or_bytes).read_bytes()
    if len(blob) < 12:
        raise FormatError("archive truncated")
    magic, version, count = struct.unpack_from("<4sII", blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version}")
    pos = 12
    entries = []

    def read_name() -> str:
        nonlocal pos
        if pos + 2 > len(blob):
            raise FormatError("archive truncated in field table")
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + n > len(blob):
            raise FormatError("archive truncated in field table")
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        return name

    def need(nbytes: int) -> None:
        if pos + nbytes > len(blob):
            raise FormatError("archive truncated in field table")

    for _ in range(count):
        name = read_name()
        need(1)
        ndim = blob[pos]
        pos += 1
        if ndim not in (2, 3):
            raise FormatError(f"field '{name}': bad ndim {ndim}")
        need(8 * ndim)
        dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        need(struct.calcsize("<BBddB"))
        dtype_c, ebm_c, eb_value, eb_abs, pred_c = struct.unpack_from("<BBddB", blob, pos)
        pos += struct.calcsize("<BBddB")
        if dtype_c not in DTYPE_NAMES or ebm_c not in EB_MODE_NAMES or pred_c not in PREDICTOR_NAMES:
            raise FormatError(f"field '{name}': bad enum code in header")
        need(1)
        n_anchors = blob[pos]
        pos += 1
        anchors = tuple(read_name() for _ in range(n_anchors))
        need(1)
        backend_c = blob[pos]
        pos += 1
        if backend_c not in BACKEND_NAMES:
            raise FormatError(f"field '{name}': unknown backend mode {backend_c}")
        streams = {}
        for key in STREAM_KEYS:
            need(20)
            off, length, crc = struct.unpack_from("<QQI", blob, pos)
            pos += 20
            if off + length > len(blob):
                raise FormatError(f"field '{name}': stream '{key}' exceeds file size")
            data = blob[off : off + length]
            if zlib.crc32(data) & 0xFFFFFFFF != crc:
                raise IntegrityError(f"field '{name}': stream '{key}' CRC mismatch")
            streams[key] = data
        entries.append(ArchiveEntry(
            name=name,
            dims=tuple(int(d) for d in dims),
            dtype=DTYPE_NAMES[dtype_c],
            eb_mode=EB_MODE_NAMES[ebm_c],
            eb_value=eb_value,
            eb_abs=eb_abs,
            predictor=PREDICTOR_NAMES[pred_c],
            anchors=anchors,
            backend=BACKEND_NAMES[backend_c],
            streams=streams,
        ))
    return Archive(entries=entries)
