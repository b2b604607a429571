"""glomquant command line: process, cohort, phantom, validate."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .core import GlomQuantError, InputError, PipelineConfig
from .phantom import PhantomSpec, generate_phantom_case, validate_report
from .pipeline import default_workers, process_case
from .stats import CohortRow, cohort_statistics, roc_point_rows

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_VALIDATION = 4


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_config(path):
    return PipelineConfig.from_file(path) if path else PipelineConfig()


def _run_case(manifest, config, out_dir, workers, render):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = process_case(manifest, config, workers=workers, render_dir=out_dir if render else None)
    report = result.report()
    _write_json(out_dir / "report.json", report)
    return result, report


def cmd_process(args):
    config = _load_config(args.config)
    result, report = _run_case(args.manifest, config, args.out, args.workers, not args.no_render)
    for line in report["diagnostics"]:
        print(line, file=sys.stderr)
    if result.all_empty:
        print(f"no GBM found in any image of case {result.case_id}", file=sys.stderr)
        return EXIT_EMPTY
    g, f = report["gbm"], report["fpe"]
    print(f"{result.case_id}: d_a={g.get('d_a_nm', float('nan')):.1f} nm ({g.get('grade', g.get('error'))}), "
          f"r_fpe={f.get('r_fpe', float('nan')):.3f} ({f.get('grade', f.get('error'))}), "
          f"wall={report['runtime']['case_wall_s']:.2f} s")
    return EXIT_OK


def find_manifests(root):
    """Case manifests under a cohort directory: top-level *.json and */manifest.json."""
    root = Path(root)
    found = sorted(p for p in root.glob("*.json") if p.is_file())
    found += sorted(root.glob("*/manifest.json"))
    return found


def cmd_cohort(args):
    config = _load_config(args.config)
    out = Path(args.out)
    manifests = find_manifests(args.cohort_dir)
    if not manifests:
        print(f"no case manifests found under {args.cohort_dir}", file=sys.stderr)
        return EXIT_INPUT
    rows = []
    for manifest in manifests:
        try:
            result, report = _run_case(manifest, config, out / manifest.stem if manifest.name != "manifest.json"
                                       else out / manifest.parent.name, args.workers, not args.no_render)
        except InputError as exc:
            print(f"{manifest}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        for line in report["diagnostics"]:
            print(f"{result.case_id}: {line}", file=sys.stderr)
        rows.append(CohortRow.from_report(report, config.gbm_thin_nm, config.gbm_thick_nm))
    stats = cohort_statistics(rows, config)
    stats["cases"] = [r.case_id for r in rows]
    _write_json(out / "cohort_stats.json", stats)
    with open(out / "roc_points.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "fpr", "tpr"])
        writer.writerows(roc_point_rows(stats))
    print(f"{len(rows)} cases -> {out / 'cohort_stats.json'}")
    return EXIT_OK


def cmd_phantom(args):
    try:
        with open(args.spec) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read phantom spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = PhantomSpec.from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"malformed phantom spec {args.spec}: {exc}") from exc
    manifest, _ = generate_phantom_case(spec, args.out)
    print(manifest)
    return EXIT_OK


def cmd_validate(args):
    docs = []
    for path in (args.report, args.ground_truth):
        try:
            with open(path) as fh:
                docs.append(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
    checks = validate_report(docs[0], docs[1], args.tol_thickness_pct, args.tol_fpe)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_VALIDATION


def build_parser():
    parser = argparse.ArgumentParser(prog="glomquant", description="Morphometry from glomerular TEM model outputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process", help="quantify one case")
    p.add_argument("manifest")
    p.add_argument("--config", help="JSON file with PipelineConfig overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--no-render", action="store_true", help="skip overlay PNGs")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("cohort", help="quantify every case in a directory and compare against references")
    p.add_argument("cohort_dir")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--no-render", action="store_true")
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("phantom", help="generate a synthetic case with known ground truth")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("validate", help="check a report against phantom ground truth")
    p.add_argument("report")
    p.add_argument("ground_truth")
    p.add_argument("--tol-thickness-pct", type=float, default=3.0)
    p.add_argument("--tol-fpe", type=float, default=0.05)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GlomQuantError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
