"""Command-line interface.

Exit codes: 0 ok, 1 internal error, 2 user/config error, 3 integrity or
error-bound violation.
"""

from __future__ import annotations

import argparse
import sys

from . import metrics
from .archive import read_archive
from .errors import CorruptStreamError, IntegrityError, XfcError
from .fields import ErrorBoundSpec, load_raw_field
from .manifest import parse_manifest, validate_manifest
from .pipeline import plan_original_fields, run_decompress, run_plan
from . import cfnn

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help="worker thread cap (default: logical cores, env XFC_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xfc", description="Cross-field error-bounded lossy compressor")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="compress all fields of a manifest into one archive")
    c.add_argument("--manifest", required=True)
    c.add_argument("--eb-mode", choices=["abs", "rel"], required=True)
    c.add_argument("--eb", type=float, required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--backend", choices=["none", "deflate"], default="deflate")
    c.add_argument("--no-crossfield", action="store_true",
                   help="compress targets Lorenzo-only (baseline configuration)")
    _add_threads(c)

    d = sub.add_parser("decompress", help="decompress an archive to raw field files")
    d.add_argument("--input", required=True)
    d.add_argument("--outdir", required=True)
    _add_threads(d)

    i = sub.add_parser("inspect", help="print archive header and payload sizes")
    i.add_argument("--input", required=True)

    e = sub.add_parser("evaluate", help="decompress and compare against the originals")
    e.add_argument("--manifest", required=True)
    e.add_argument("--archive", required=True)
    e.add_argument("--csv", default=None, help="write the metrics CSV here (default: stdout)")
    _add_threads(e)

    t = sub.add_parser("export-training", help="write an NDT1 training-tensor file for one target")
    t.add_argument("--manifest", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--output", required=True)
    return p


def cmd_compress(args) -> int:
    plan = validate_manifest(parse_manifest(args.manifest))
    spec = ErrorBoundSpec(mode=args.eb_mode, value=args.eb)
    blob, stats = run_plan(plan, spec, backend=args.backend, threads=args.threads,
                           use_crossfield=not args.no_crossfield)
    with open(args.output, "wb") as f:
        f.write(blob)
    print(f"{'field':<16} {'kind':<8} {'CR':>8} {'bits/pt':>8} {'entropy':>8} "
          f"{'outliers':>8} {'exact':>6}")
    for s in stats:
        print(f"{s.name:<16} {s.predictor:<8} {s.cr:>8.2f} {s.bitrate:>8.3f} "
              f"{s.entropy_bits:>8.3f} {s.n_outliers:>8} {s.n_exact:>6}")
        if s.hybrid_weights is not None:
            w = ", ".join(f"{v:.4f}" for v in s.hybrid_weights)
            shares = ", ".join(f"{v:.1%}" for v in s.weight_shares)
            print(f"{'':<16} weights [{w}]  shares [{shares}]")
    total_raw = sum(s.raw_bytes for s in stats)
    print(f"archive {args.output}: {len(blob)} bytes, overall CR {total_raw / len(blob):.2f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    paths = run_decompress(read_archive(args.input), args.outdir, threads=args.threads)
    for name, path in paths.items():
        print(f"{name} -> {path}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    archive = read_archive(args.input)
    print(f"{'field':<16} {'dims':<16} {'dtype':<6} {'eb':<14} {'kind':<8} "
          f"{'payload':>10} {'model':>8}")
    for e in archive.entries:
        dims = "x".join(map(str, e.dims))
        eb = f"{e.eb_mode} {e.eb_value:g}"
        print(f"{e.name:<16} {dims:<16} {e.dtype:<6} {eb:<14} {e.predictor:<8} "
              f"{e.payload_bytes:>10} {len(e.streams['model']):>8}")
        if e.anchors:
            print(f"{'':<16} anchors: {', '.join(e.anchors)}  backend: {e.backend}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    plan = validate_manifest(parse_manifest(args.manifest))
    blob = open(args.archive, "rb").read()
    rows = metrics.evaluate_rows(plan, blob, threads=args.threads)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            metrics.write_csv(rows, f)
    else:
        metrics.write_csv(rows, sys.stdout)
    archive = read_archive(blob)
    violations = [(r.field, r.max_err, archive.entry(r.field).eb_abs)
                  for r in rows if r.max_err > archive.entry(r.field).eb_abs]
    for name, err, bound in violations:
        print(f"ERROR-BOUND VIOLATION: field '{name}' max_err {err:g} > eb_abs {bound:g}",
              file=sys.stderr)
    return EXIT_INTEGRITY if violations else EXIT_OK


def cmd_export_training(args) -> int:
    plan = validate_manifest(parse_manifest(args.manifest))
    entry = next((e for e in plan.order if e.name == args.target), None)
    if entry is None:
        print(f"error: field '{args.target}' not in manifest", file=sys.stderr)
        return EXIT_USAGE
    if entry.role != "target" or not entry.anchors:
        print(f"error: field '{args.target}' has no anchors (role {entry.role})", file=sys.stderr)
        return EXIT_USAGE
    originals = plan_original_fields(plan)
    anchors = [originals[a] for a in entry.anchors]
    cfnn.export_training_tensors(anchors, originals[entry.name], args.output)
    print(f"wrote {args.output}: {len(anchors) * len(entry.dims)} input + "
          f"{len(entry.dims)} target channels, dims {'x'.join(map(str, entry.dims))}")
    return EXIT_OK


_HANDLERS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "inspect": cmd_inspect,
    "evaluate": cmd_evaluate,
    "export-training": cmd_export_training,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (IntegrityError, CorruptStreamError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (XfcError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
