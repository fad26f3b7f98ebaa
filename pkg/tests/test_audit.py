import csv
import json

import numpy as np
import pytest

from lensim.audit import AuditConfig, audit_to_dir, check_parallel, run_audit
from lensim.bundle import BundleError, make_bundle, write_bundle
from lensim.core import LayerRange
from lensim.metrics import Metric
from lensim.report import emit_report, read_records_csv
from lensim.synthetic import length_gradient_bundle


@pytest.fixture(scope="module")
def gradient():
    return length_gradient_bundle(n_items=60, seed=1)


@pytest.fixture(scope="module")
def gradient_report(gradient):
    return run_audit(AuditConfig(gradient, bootstrap_b=300, seed=4))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_planted_gradient_pattern(gradient_report):
    r = gradient_report
    assert r.ok and r.layers == LayerRange(1, 3)
    cos, cka, rv = r.rows["cosine"], r.rows["cka"], r.rows["rv"]
    assert cos.length_only.r2 > 0.5 and cos.length_only.betas["length_ratio"] > 0
    assert cka.length_only.r2 < 0.05
    assert rv.length_only.r2 < 0.05
    # the ratio CI comes from the bootstrap by default
    assert cos.length_only.ci["r2"].method == "bootstrap"


def test_conservation_and_traceability(gradient, gradient_report):
    r = gradient_report
    assert len(r.records) + len(r.excluded) == r.total_pairs == len(gradient.ids)
    assert {rec.pair_id for rec in r.records} <= set(gradient.ids)
    for rec in r.records:
        en, xx = gradient.entry(rec.pair_id, "en"), gradient.entry(rec.pair_id, "xx")
        assert rec.lengths == (min(en.T, xx.T), max(en.T, xx.T))
        assert rec.depth_range == abs(en.depth - xx.depth)


def test_filter_excludes_and_counts(gradient):
    r = run_audit(AuditConfig(gradient, min_shared=10, ci_method="fisher"))
    assert r.excluded and all("fewer than 10" in why for _, why in r.excluded)
    assert len(r.records) + len(r.excluded) == r.total_pairs


def identical_language_bundle(n=12, langs=("python", "java")):
    g = np.random.default_rng(0)
    items = []
    for i in range(n):
        t = int(g.integers(5, 15))
        arr = g.standard_normal((4, t, 6))
        toks = [f"tok{k}" for k in range(t)]
        for lang in langs:
            items.append((f"q{i}", lang, arr, toks, 3.0))
    return make_bundle(items)


def test_identical_languages():
    r = run_audit(AuditConfig(identical_language_bundle(), reference="python", bootstrap_b=100))
    for rec in r.records:
        assert rec.similarity["cosine"] == pytest.approx(0.0, abs=1e-12)
        assert rec.similarity["cka"] == pytest.approx(0.0, abs=1e-12)
    assert all(level.mean == pytest.approx(1.0, abs=1e-12) for level in r.cka_levels)
    # constant DV and constant length ratio: every regression is recorded as failed
    assert not r.ok and set(r.regression_errors) == {"cosine", "cka", "rv"}

    raw = run_audit(AuditConfig(identical_language_bundle(), bootstrap_b=100))
    for rec in raw.records:
        assert rec.similarity["cka"] == pytest.approx(1.0, abs=1e-12)
        assert rec.similarity["rv"] == pytest.approx(1.0, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError, match="empty"):
        AuditConfig("x", metrics=())
    with pytest.raises(ValueError, match="min_shared"):
        AuditConfig("x", min_shared=1)
    AuditConfig("x", metrics=("cosine",), min_shared=1)
    with pytest.raises(ValueError, match="B"):
        AuditConfig("x", bootstrap_b=50)


def test_missing_counterpart_named():
    b = identical_language_bundle(3)
    b = make_bundle([(e.id, e.language, b.arrays[(e.id, e.language)], e.tokens, e.depth)
                     for e in b.entries if (e.id, e.language) != ("q1", "java")])
    with pytest.raises(BundleError, match="'q1'.*'java'"):
        check_parallel(b)


def test_reference_mode_with_three_languages():
    b = length_gradient_bundle(n_items=20, languages=("python", "js", "go"), seed=5)
    r = run_audit(AuditConfig(b, reference="python", ci_method="fisher", layers=LayerRange(0, 3)))
    assert r.ok and len(r.records) == 20
    assert [c.pair for c in r.cka_levels] == ["python vs js", "python vs go", "python vs {js, go}"]
    assert all(c.n == 20 for c in r.cka_levels)


def test_pairwise_units_without_reference():
    b = length_gradient_bundle(n_items=12, languages=("a", "b", "c"), seed=2)
    r = run_audit(AuditConfig(b, metrics=("cosine",), min_shared=1, ci_method="fisher"))
    assert r.total_pairs == 36
    assert r.records[0].pair_id == "item0000|a|b"


def test_emitted_tables(tmp_path, gradient_report):
    out = emit_report(gradient_report, tmp_path)
    n = len(gradient_report.records)
    for m in ("cosine", "cka", "rv"):
        assert len(rows(out / f"fig_{m}.csv")) == n
    metrics = rows(out / "table_metrics.csv")
    assert [r["metric"] for r in metrics] == ["cosine", "cka", "rv"]
    for r in metrics:
        assert r["beta_len_only"] == r["r_univ"]
    doc = json.loads((out / "report.json").read_text())
    for m, roll in doc["regression"].items():
        assert abs(roll["beta_length_only"] - roll["r_univ"]) <= 1e-10
    assert doc["included_pairs"] + doc["excluded_pairs"] == doc["total_pairs"]
    cross = rows(out / "table_crossdomain.csv")
    assert len(cross) == 1 and "cka_r2" in cross[0]
    reg = rows(out / "table_regression.csv")
    assert list(reg[0]) == ["metric", "n", "r2_length_only", "r2_ci_lo", "r2_ci_hi", "ci_method", "r2_full",
                            "beta_len", "beta_depth", "beta_shared", "p_proxy_len"]
    levels = rows(out / "table_cka_levels.csv")
    assert levels[0]["pair"] == "en vs xx" and int(levels[0]["n"]) == n
    recs, names = read_records_csv(out / "records.csv")
    assert names == ["cosine", "cka", "rv"] and len(recs) == n


def test_single_metric_table(tmp_path, gradient):
    r = run_audit(AuditConfig(gradient, metrics=("cka",), ci_method="fisher"))
    emit_report(r, tmp_path)
    assert len(rows(tmp_path / "table_metrics.csv")) == 1
    assert not (tmp_path / "fig_cosine.csv").exists()


def test_end_to_end_byte_identical(tmp_path, gradient):
    write_bundle(gradient, tmp_path / "bundle")
    dirs = []
    for k in range(2):
        cfg = AuditConfig(str(tmp_path / "bundle"), bootstrap_b=200, seed=7, out_dir=tmp_path / f"out{k}")
        dirs.append(audit_to_dir(cfg)[1])
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_unknown_reference_rejected(gradient):
    with pytest.raises(ValueError, match="reference"):
        run_audit(AuditConfig(gradient, reference="python"))

