"""Manifest parsing and validation into an ordered compression plan.

Manifest grammar (line-oriented, blank-line separated stanzas, '#' comments):

    field <name>
    file <path>
    dims <d0> <d1> [<d2>]
    dtype f32|f64
    role plain|anchor|target
    anchors <name> [<name>...]   (target only)
    cfnn <path>                  (target only)
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .errors import ManifestError

ROLES = ("plain", "anchor", "target")


@dataclass
class FieldEntry:
    name: str
    path: str
    dims: tuple[int, ...]
    dtype: str
    role: str = "plain"
    anchors: tuple[str, ...] = ()
    cfnn_path: str | None = None


@dataclass
class Manifest:
    entries: list[FieldEntry]
    base_dir: Path = dc_field(default_factory=Path)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


@dataclass
class CompressionPlan:
    """Field schedule with every anchor ordered before any target using it."""

    manifest: Manifest
    order: list[FieldEntry]


def parse_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e

    entries: list[FieldEntry] = []
    stanza: dict[str, str] = {}

    def flush() -> None:
        if not stanza:
            return
        name = stanza.get("field")
        if not name:
            raise ManifestError(f"{path}: stanza without a 'field' line")
        for key in ("file", "dims", "dtype"):
            if key not in stanza:
                raise ManifestError(f"{path}: field '{name}' is missing '{key}'")
        try:
            dims = tuple(int(t) for t in stanza["dims"].split())
        except ValueError:
            raise ManifestError(f"{path}: field '{name}' has non-integer dims") from None
        if len(dims) not in (2, 3) or any(d <= 0 for d in dims):
            raise ManifestError(f"{path}: field '{name}' dims must be 2 or 3 positive integers")
        dtype = stanza["dtype"]
        if dtype not in ("f32", "f64"):
            raise ManifestError(f"{path}: field '{name}' dtype must be f32 or f64")
        role = stanza.get("role", "plain")
        if role not in ROLES:
            raise ManifestError(f"{path}: field '{name}' role must be one of {ROLES}")
        anchors = tuple(stanza["anchors"].split()) if "anchors" in stanza else ()
        entries.append(
            FieldEntry(
                name=name,
                path=stanza["file"],
                dims=dims,
                dtype=dtype,
                role=role,
                anchors=anchors,
                cfnn_path=stanza.get("cfnn"),
            )
        )
        stanza.clear()

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            flush()
            continue
        parts = line.split(None, 1)
        key = parts[0]
        value = parts[1].strip() if len(parts) > 1 else ""
        if key == "field":
            flush()
        if key in stanza:
            raise ManifestError(f"{path}: duplicate '{key}' line in one stanza")
        stanza[key] = value
    flush()

    if not entries:
        raise ManifestError(f"{path}: no fields defined")
    return Manifest(entries=entries, base_dir=path.parent)


def validate_manifest(manifest: Manifest) -> CompressionPlan:
    """Check the anchor DAG (depth <= 1, matching dims) and emit a schedule."""
    by_name: dict[str, FieldEntry] = {}
    for e in manifest.entries:
        if e.name in by_name:
            raise ManifestError(f"duplicate field name '{e.name}'")
        by_name[e.name] = e

    for e in manifest.entries:
        if e.role == "target":
            if not e.anchors:
                raise ManifestError(f"target field '{e.name}' declares no anchors")
            if not e.cfnn_path:
                raise ManifestError(f"target field '{e.name}' declares no cfnn weight file")
            for a in e.anchors:
                if a not in by_name:
                    raise ManifestError(f"target field '{e.name}' references missing anchor '{a}'")
                if a == e.name:
                    raise ManifestError(f"target field '{e.name}' anchors on itself (cycle)")
                ae = by_name[a]
                if ae.role == "target":
                    raise ManifestError(
                        f"anchor '{a}' of target '{e.name}' is itself a target "
                        "(cyclic or deep dependency; anchors must be plain or anchor-only)"
                    )
                if ae.dims != e.dims:
                    raise ManifestError(
                        f"anchor '{a}' dims {ae.dims} do not match target '{e.name}' dims {e.dims}"
                    )
        else:
            if e.anchors:
                raise ManifestError(f"non-target field '{e.name}' must not declare anchors")
            if e.cfnn_path:
                raise ManifestError(f"non-target field '{e.name}' must not declare a cfnn file")

    # Depth-1 DAG: stable order with all non-targets first is a topological order.
    order = [e for e in manifest.entries if e.role != "target"]
    order += [e for e in manifest.entries if e.role == "target"]
    pos = {e.name: i for i, e in enumerate(order)}
    for e in order:
        for a in e.anchors:
            assert pos[a] < pos[e.name]
    return CompressionPlan(manifest=manifest, order=order)
