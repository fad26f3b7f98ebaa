"""CSV/JSON emission for audit and regression results.

Table numbers are written with 6 significant digits (``format(x, ".6g")``) so
repeated runs produce byte-identical files. ``records.csv`` is an interchange
file and keeps shortest round-trip precision, as does the JSON roll-up.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

from .stats import PREDICTORS, ConfoundRow, SimilarityRecord

RECORD_COLUMNS = ("pair_id", "len_a", "len_b", "length_ratio", "depth_range", "shared_fraction")


def fmt(value: Any, exact: bool = False) -> str:
    if value is None:
        return ""
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value) if exact else format(value, ".6g")
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], exact: bool = False) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v, exact) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(value: Any) -> Any:
    if isinstance(value, float):
        return None if not math.isfinite(value) else value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_records_csv(path: Path, records: Sequence[SimilarityRecord], metrics: Sequence[str]) -> None:
    rows = []
    for r in records:
        len_a, len_b = r.lengths if r.lengths else (None, None)
        rows.append([r.pair_id, len_a, len_b, r.length_ratio, r.depth_range, r.shared_fraction,
                     *(r.similarity[m] for m in metrics)])
    _write_csv(path, [*RECORD_COLUMNS, *metrics], rows, exact=True)


def read_records_csv(path: str | Path) -> tuple[list[SimilarityRecord], list[str]]:
    """Inverse of :func:`write_records_csv`; every non-covariate column is a metric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = {"pair_id", "length_ratio"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        metrics = [c for c in reader.fieldnames if c not in RECORD_COLUMNS]
        if not metrics:
            raise ValueError(f"{path}: no similarity columns")
        records = []
        for row in reader:
            def num(key: str) -> float:
                text = (row.get(key) or "").strip()
                return float(text) if text else math.nan

            lengths, ratio = None, num("length_ratio")
            if (row.get("len_a") or "").strip() and (row.get("len_b") or "").strip():
                lengths = (int(row["len_a"]), int(row["len_b"]))
            records.append(SimilarityRecord(
                pair_id=row["pair_id"],
                similarity={m: num(m) for m in metrics},
                length_ratio=ratio,
                depth_range=num("depth_range"),
                shared_fraction=num("shared_fraction"),
                lengths=lengths,
            ))
    return records, metrics


def _beta(row: ConfoundRow, name: str) -> float | None:
    return row.full.betas.get(name)


def write_tables(out: Path, rows: dict[str, ConfoundRow], label: str = "") -> dict[str, Any]:
    """Write the regression-shaped tables and return their JSON roll-up."""
    reg_rows, metric_rows, rollup = [], [], {}
    for name, row in rows.items():
        ci = row.length_only.ci.get("r2")
        reg_rows.append([
            name, row.n, row.length_only.r2, ci.lo if ci else None, ci.hi if ci else None,
            ci.method if ci else "", row.full.r2, _beta(row, "length_ratio"), _beta(row, "depth_range"),
            _beta(row, "shared_fraction"), row.length_only.p_proxy.get("length_ratio"),
        ])
        metric_rows.append([
            name, row.n, row.full.r2, _beta(row, "length_ratio"), _beta(row, "depth_range"),
            row.r_univ, row.length_only.betas["length_ratio"],
        ])
        rollup[name] = {
            "n": row.n,
            "predictors": list(row.full_predictors),
            "r2_length_only": row.length_only.r2,
            "r2_full": row.full.r2,
            "r_univ": row.r_univ,
            "beta_length_only": row.length_only.betas["length_ratio"],
            "betas_full": row.full.betas,
            "ci": {k: {"lo": v.lo, "hi": v.hi, "method": v.method} for k, v in row.full.ci.items()},
            "p_proxy_length_only": row.length_only.p_proxy,
            "p_proxy_full": row.full.p_proxy,
        }
    _write_csv(out / "table_regression.csv",
               ["metric", "n", "r2_length_only", "r2_ci_lo", "r2_ci_hi", "ci_method", "r2_full",
                "beta_len", "beta_depth", "beta_shared", "p_proxy_len"], reg_rows)
    _write_csv(out / "table_metrics.csv",
               ["metric", "n", "r2_full", "beta_len", "beta_depth", "r_univ", "beta_len_only"], metric_rows)

    header, values = ["label", "n"], [label, max((r.n for r in rows.values()), default=0)]
    for name, row in rows.items():
        ci = row.length_only.ci.get("r2")
        header += [f"{name}_r2", f"{name}_ci_lo", f"{name}_ci_hi", f"{name}_ci_method"]
        values += [row.length_only.r2, ci.lo if ci else None, ci.hi if ci else None, ci.method if ci else ""]
    _write_csv(out / "table_crossdomain.csv", header, [values])
    return rollup


def write_fig_data(out: Path, records: Sequence[SimilarityRecord], metrics: Sequence[str]) -> None:
    for m in metrics:
        _write_csv(out / f"fig_{m}.csv", ["pair_id", *PREDICTORS, m],
                   [[r.pair_id, r.length_ratio, r.depth_range, r.shared_fraction, r.similarity[m]]
                    for r in records])


def write_json(path: Path, doc: dict[str, Any]) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_report(report, out_dir) -> Path:
    """Write every table, the per-metric scatter data, records and ``report.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = report.metric_names
    rollup = write_tables(out, report.rows, report.config.label)
    _write_csv(out / "table_cka_levels.csv", ["pair", "mean_cka", "std", "n"],
               [[c.pair, c.mean, c.std, c.n] for c in report.cka_levels])
    write_fig_data(out, report.records, metrics)
    write_records_csv(out / "records.csv", report.records, metrics)
    cfg = report.config
    doc = {
        "label": cfg.label,
        "languages": report.languages,
        "reference": cfg.reference,
        "layers": [report.layers.lo, report.layers.hi],
        "metrics": metrics,
        "min_shared": cfg.min_shared,
        "ci_method": cfg.ci_method,
        "bootstrap_b": cfg.bootstrap_b,
        "seed": cfg.seed,
        "total_pairs": report.total_pairs,
        "included_pairs": len(report.records),
        "excluded_pairs": len(report.excluded),
        "excluded": [{"pair_id": p, "reason": why} for p, why in report.excluded],
        "regression": rollup,
        "regression_errors": report.regression_errors,
        "cka_levels": [vars(c) for c in report.cka_levels],
    }
    write_json(out / "report.json", doc)
    return out
