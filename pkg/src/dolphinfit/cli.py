"""Command-line entry point: ``reconstruct``, ``baseline``, ``synth`` and ``report``.

Every failure ends with exit status 1 (2 for usage errors) and a single
``dolphinfit: error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .body import load_template
from .config import RunConfig
from .morpho import OutOfModelError, elliptical_body_volume, read_hw_ratios, read_profiles, report_row
from .pipeline import export, load_record, load_sequence, run_reconstruction
from .synth import SceneSpec, compare_recovery, generate_scene
from .template import default_template


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"dolphinfit: error: {message}\n")
        raise SystemExit(2)


def _template(args):
    if args.template_mesh is None and args.template_rig is None:
        return default_template()
    if args.template_mesh is None or args.template_rig is None:
        raise ValueError("--template-mesh and --template-rig must be given together")
    return load_template(args.template_mesh, args.template_rig)


def _cmd_reconstruct(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    template = _template(args)
    obs = load_sequence(args.directory)

    def progress(epoch, entry):
        if not args.quiet:
            print(f"epoch {epoch:4d}  total {entry['total']:.6g}", file=sys.stderr)

    result = run_reconstruction(obs, template, cfg, workers=args.workers, progress=progress)
    out = export(result, args.out, subject_id=Path(args.directory).name)
    print(f"volume {result.volume:.6f} m^3  length {result.body_length:.4f} m  mass {result.mass:.3f} kg  -> {out}")
    return 0


def _cmd_baseline(args) -> int:
    profiles = read_profiles(args.profile)
    ratios = read_hw_ratios(args.hw) if args.hw else None
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["id", "body_length", "volume_elliptical", "bci", "density", "mass_elliptical"])
    for ident, prof in profiles:
        if ratios is not None:
            prof = replace(prof, hw_ratios=ratios)
        volume = elliptical_body_volume(prof, printed_form=args.printed_integrand)
        try:
            row = report_row(ident, prof.body_length, volume_elliptical=volume)
        except OutOfModelError as exc:
            raise ValueError(f"subject {ident}: {exc}") from exc
        writer.writerow([ident, prof.body_length, volume, row["bci"], row["density"], row["mass_elliptical"]])
    return 0


def _cmd_synth(args) -> int:
    spec = SceneSpec.load(args.spec)
    gt = generate_scene(spec, _template(args), args.out)
    print(f"wrote {gt.T} frames to {args.out}")
    return 0


def _cmd_report(args) -> int:
    rep = compare_recovery(load_record(args.gt), load_record(args.est), _template(args))
    print(json.dumps(rep.to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dolphinfit", description="Monocular drone reconstruction of dolphins.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def template_flags(p):
        p.add_argument("--template-mesh", help="template OBJ (defaults to the shipped dolphin)")
        p.add_argument("--template-rig", help="template rig JSON")

    p = sub.add_parser("reconstruct", help="fit the body model to a frame sequence")
    p.add_argument("directory")
    p.add_argument("--config", help="RunConfig JSON; omitted keys take their defaults")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1, help="frame-parallel processes (1 = sequential)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--quiet", action="store_true")
    template_flags(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("baseline", help="elliptical volume and mass from width profiles")
    p.add_argument("--profile", required=True, help="CSV with BL and W05..W95 (optional H05..H95, id)")
    p.add_argument("--hw", help="19 height/width ratios for sites without measured heights")
    p.add_argument("--printed-integrand", action="store_true")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("synth", help="render a synthetic sequence with ground truth")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    template_flags(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="compare an estimate against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    template_flags(p)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        sys.stderr.write("dolphinfit: error: --workers must be >= 1\n")
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, ArithmeticError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"dolphinfit: error: {msg}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
