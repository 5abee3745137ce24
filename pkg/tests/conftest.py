import numpy as np
import pytest

from xfcomp.fields import Field, store_raw_field

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_manifest(tmp_path, fields, stanzas):
    """Store raw field files and a manifest; returns the manifest path.

    `fields` maps name -> Field, `stanzas` is a list of dicts with keys
    name/role/anchors/cfnn.
    """
    lines = []
    for st in stanzas:
        name = st["name"]
        fld = fields[name]
        raw = tmp_path / f"{name}.bin"
        store_raw_field(fld, raw)
        lines.append(f"field {name}")
        lines.append(f"file {raw.name}")
        lines.append("dims " + " ".join(map(str, fld.dims)))
        lines.append(f"dtype {fld.dtype}")
        lines.append(f"role {st.get('role', 'plain')}")
        if st.get("anchors"):
            lines.append("anchors " + " ".join(st["anchors"]))
        if st.get("cfnn"):
            lines.append(f"cfnn {st['cfnn']}")
        lines.append("")
    path = tmp_path / "plan.manifest"
    path.write_text("\n".join(lines))
    return path
