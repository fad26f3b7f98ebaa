"""Command line entry point: ``lensim {synthetic,theory,ingest,audit,regress}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import theory
from .audit import AuditConfig, run_audit
from .bundle import BundleError, read_bundle, write_bundle
from .core import LayerRange
from .metrics import Metric
from .report import emit_report, fmt, read_records_csv, write_json, write_tables
from .stats import confound_table
from .synthetic import SyntheticConfig, compare_to_theory, length_gradient_bundle, run_synthetic_experiment

log = logging.getLogger("lensim")

SYNTHETIC_HEADER = ["pair_index", "ratio", "len_a", "len_b", "cosine", "cka", "predicted_cosine", "deviation"]


def _csv_list(cast):
    def parse(text: str):
        return [cast(v) for v in text.split(",") if v.strip()]
    return parse


def _layer_range(text: str) -> LayerRange:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return LayerRange(lo, hi)


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout
    return open(path, "w", newline="", encoding="utf-8")


def cmd_synthetic(args) -> int:
    params = theory.AnisotropyParams(args.mu_norm, args.sigma, args.dim)
    if args.bundle_out:
        bundle = length_gradient_bundle(
            n_items=args.pairs, params=params, long_length=args.base_length,
            ratio_lo=args.ratio_lo, ratio_hi=args.ratio_hi, seed=args.seed,
            n_layers=args.layers, languages=tuple(args.languages),
        )
        path = write_bundle(bundle, args.bundle_out)
        log.info("wrote %d sequences to %s", len(bundle.entries), path)
        return 0
    cfg = SyntheticConfig(params, args.pairs, args.base_length, args.ratio_lo, args.ratio_hi,
                          args.seed, args.random_direction)
    records = run_synthetic_experiment(cfg, workers=args.workers)
    comparison = compare_to_theory(records, params, cfg.base_length)
    fh = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SYNTHETIC_HEADER)
        for rec, pred, dev in zip(records, comparison.predicted, comparison.deviations):
            writer.writerow([fmt(v) for v in (rec.pair_index, rec.ratio, rec.len_a, rec.len_b,
                                              rec.cosine, rec.cka, pred, dev)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    log.info("mean deviation %.3g, max |deviation| %.3g", comparison.mean_deviation, comparison.max_abs_deviation)
    return 0


def cmd_theory(args) -> int:
    if args.rho:
        grid = [theory.AnisotropyParams.from_ratio(r) for r in args.rho]
    else:
        grid = [theory.AnisotropyParams(args.mu_norm, args.sigma, args.dim)]
    fh = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rho", "m", "n", "expected_cosine", "taylor_cosine", "artifact_signal"])
        for p in grid:
            for m in args.m:
                for n in args.n:
                    lp = theory.LengthPair(m, n)
                    writer.writerow([fmt(v) for v in (
                        theory.anisotropy_ratio(p), m, n, theory.expected_cosine(p, lp),
                        theory.taylor_cosine(p, lp), theory.artifact_signal(lp),
                    )])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_ingest_validate(args) -> int:
    bundle = read_bundle(args.bundle)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["id", "language", "n_layers", "T", "d", "tokens", "depth"])
    for e in bundle.entries:
        writer.writerow([e.id, e.language, e.n_layers, e.T, e.d, len(e.tokens), fmt(e.depth)])
    with_depth = sum(e.depth is not None for e in bundle.entries)
    print(f"# {len(bundle.entries)} sequences, {len(bundle.ids)} ids, languages {bundle.languages}; "
          f"depth present for {with_depth}/{len(bundle.entries)}")
    return 0


def cmd_audit(args) -> int:
    cfg = AuditConfig(
        bundle=args.bundle,
        metrics=tuple(Metric(m) for m in args.metrics),
        layers=args.layers,
        reference=args.reference,
        min_shared=args.min_shared,
        bootstrap_b=args.bootstrap,
        seed=args.seed,
        ci_method=args.ci,
        exclude_reference_baseline=args.exclude_reference_baseline,
        shared_level=args.shared_level,
        out_dir=args.out,
        label=args.label,
    )
    report = run_audit(cfg)
    emit_report(report, args.out)
    log.info("%d of %d pairs included; tables in %s", len(report.records), report.total_pairs, args.out)
    for name, err in report.regression_errors.items():
        log.error("regression for %s failed: %s", name, err)
    return 0 if report.ok else 3


def cmd_regress(args) -> int:
    records, metrics = read_records_csv(args.records)
    if args.metrics:
        unknown = set(args.metrics) - set(metrics)
        if unknown:
            raise ValueError(f"metrics {sorted(unknown)} not in {args.records}")
        metrics = args.metrics
    rows = {m: confound_table(records, m, ci_method=args.ci, B=args.bootstrap, seed=args.seed) for m in metrics}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rollup = write_tables(out, rows, args.label)
    write_json(out / "regression.json", {"records": str(args.records), "n": len(records), "regression": rollup})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lensim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synthetic", help="random anisotropic pairs: cosine vs CKA across length ratios")
    p.add_argument("--dim", type=int, default=4096)
    p.add_argument("--mu-norm", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--base-length", type=int, default=100)
    p.add_argument("--ratio-lo", type=float, default=0.3)
    p.add_argument("--ratio-hi", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-direction", action="store_true", help="seeded random direction for the mean vector")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="-", help="CSV path (default stdout)")
    p.add_argument("--bundle-out", help="write a planted length-gradient bundle here instead "
                                        "(--pairs items, --base-length as the long length)")
    p.add_argument("--layers", type=int, default=4, help="layers per sequence in --bundle-out")
    p.add_argument("--languages", type=_csv_list(str), default=["en", "xx"],
                   help="languages in --bundle-out; the first is the short one")
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("theory", help="predicted mean-pooled cosine over an (m, n, rho) grid")
    p.add_argument("--m", type=_csv_list(int), required=True)
    p.add_argument("--n", type=_csv_list(int), required=True)
    p.add_argument("--rho", type=_csv_list(float), help="anisotropy ratios; overrides --sigma/--dim/--mu-norm")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=4096)
    p.add_argument("--mu-norm", type=float, default=10.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("ingest", help="activation bundle utilities")
    ingest = p.add_subparsers(dest="ingest_cmd", required=True)
    v = ingest.add_parser("validate", help="check a bundle and list its sequences")
    v.add_argument("bundle")
    v.set_defaults(func=cmd_ingest_validate)

    p = sub.add_parser("audit", help="similarities, covariates and confound regressions for a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", type=_csv_list(str), default=["cosine", "cka", "rv"])
    p.add_argument("--layers", type=_layer_range, help="explicit LO:HI (inclusive); default middle layers")
    p.add_argument("--reference", help="reference language for the proximity DV (e.g. python)")
    p.add_argument("--exclude-reference-baseline", action="store_true",
                   help="leave the reference out of the proximity baseline")
    p.add_argument("--min-shared", type=int, default=3)
    p.add_argument("--shared-level", choices=("type", "token"), default="type")
    p.add_argument("--ci", choices=("bootstrap", "fisher"), default="bootstrap")
    p.add_argument("--bootstrap", type=int, default=5000, help="bootstrap replicates B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("regress", help="confound regressions on a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", type=_csv_list(str))
    p.add_argument("--ci", choices=("bootstrap", "fisher"), default="bootstrap")
    p.add_argument("--bootstrap", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_regress)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BundleError, ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
