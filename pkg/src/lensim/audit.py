"""End-to-end confound audit: bundle -> similarities -> covariates -> regression tables."""

from __future__ import annotations

import itertools
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import AlignedPositions, filter_min_shared, shared_token_fraction, shared_token_positions
from .bundle import ActivationBundle, BundleError, read_bundle
from .core import LayerRange, TokenMatrix, middle_layers
from .metrics import Metric, aggregate_over_layers, pairwise_similarity, python_proximity
from .stats import ConfoundRow, SimilarityRecord, confound_table

log = logging.getLogger(__name__)


@dataclass
class AuditConfig:
    bundle: str | os.PathLike | ActivationBundle
    metrics: tuple[Metric, ...] = (Metric.MEAN_POOLED_COSINE, Metric.LINEAR_CKA, Metric.RV)
    layers: LayerRange | None = None
    reference: str | None = None
    min_shared: int = 3
    bootstrap_b: int = 5000
    seed: int = 0
    ci_method: str = "bootstrap"
    exclude_reference_baseline: bool = False
    shared_level: str = "type"
    out_dir: str | os.PathLike | None = None
    label: str = ""

    def __post_init__(self):
        self.metrics = tuple(Metric(m) if not isinstance(m, Metric) else m for m in self.metrics)
        if not self.metrics:
            raise ValueError("metric set is empty")
        if len(set(self.metrics)) != len(self.metrics):
            raise ValueError("duplicate metrics")
        if any(m.needs_alignment for m in self.metrics) and self.min_shared < 2:
            raise ValueError("matrix metrics need min_shared >= 2")
        if self.min_shared < 1:
            raise ValueError("min_shared must be >= 1")
        if self.bootstrap_b < 100:
            raise ValueError("bootstrap B must be >= 100")
        if self.ci_method not in ("bootstrap", "fisher"):
            raise ValueError(f"unknown ci_method {self.ci_method!r}")


@dataclass
class CkaLevel:
    pair: str
    mean: float
    std: float
    n: int


@dataclass
class AuditReport:
    config: AuditConfig
    layers: LayerRange
    languages: list[str]
    records: list[SimilarityRecord]
    excluded: list[tuple[str, str]]
    total_pairs: int
    rows: dict[str, ConfoundRow] = field(default_factory=dict)
    regression_errors: dict[str, str] = field(default_factory=dict)
    cka_levels: list[CkaLevel] = field(default_factory=list)

    @property
    def metric_names(self) -> list[str]:
        return [m.value for m in self.config.metrics]

    @property
    def ok(self) -> bool:
        return not self.regression_errors


def check_parallel(bundle: ActivationBundle) -> None:
    langs = bundle.languages
    ids = bundle.ids
    have = {(e.id, e.language) for e in bundle.entries}
    for seq_id in ids:
        for lang in langs:
            if (seq_id, lang) not in have:
                raise BundleError(f"sequence {seq_id!r} has no {lang!r} counterpart")


class _Item:
    """Per-item cache of layer matrices and pairwise alignments."""

    def __init__(self, bundle: ActivationBundle, seq_id: str):
        self.bundle = bundle
        self.id = seq_id
        self._mats: dict[tuple[str, int], TokenMatrix] = {}
        self._align: dict[tuple[str, str], AlignedPositions] = {}

    def matrix(self, lang: str, layer: int) -> TokenMatrix:
        key = (lang, layer)
        if key not in self._mats:
            self._mats[key] = self.bundle.matrix(self.id, lang, layer)
        return self._mats[key]

    def tokens(self, lang: str) -> tuple[str, ...]:
        return self.bundle.entry(self.id, lang).tokens

    def alignment(self, a: str, b: str) -> AlignedPositions:
        if (a, b) not in self._align:
            self._align[(a, b)] = shared_token_positions(self.tokens(a), self.tokens(b))
        return self._align[(a, b)]

    def similarity(self, a: str, b: str, metric: Metric, layers: LayerRange) -> float:
        align = self.alignment(a, b) if metric.needs_alignment else None
        values = [
            pairwise_similarity(self.matrix(a, layer), self.matrix(b, layer), metric, align)
            for layer in layers
        ]
        return aggregate_over_layers(values, layers)

    def depth(self, lang: str) -> float:
        d = self.bundle.entry(self.id, lang).depth
        return math.nan if d is None else d


def _resolve_layers(cfg: AuditConfig, bundle: ActivationBundle) -> LayerRange:
    n_layers = bundle.n_layers
    if cfg.layers is None:
        return middle_layers(n_layers)
    return LayerRange(cfg.layers.lo, cfg.layers.hi, n_layers)


def _depth_range(depths: list[float]) -> float:
    if any(math.isnan(d) for d in depths):
        return math.nan
    return max(depths) - min(depths)


def run_audit(cfg: AuditConfig) -> AuditReport:
    bundle = cfg.bundle if isinstance(cfg.bundle, ActivationBundle) else read_bundle(cfg.bundle)
    check_parallel(bundle)
    languages = bundle.languages
    if len(languages) < 2:
        raise ValueError(f"need at least 2 languages, got {languages}")
    if cfg.reference is not None and cfg.reference not in languages:
        raise ValueError(f"reference language {cfg.reference!r} not in bundle languages {languages}")
    layers = _resolve_layers(cfg, bundle)
    all_pairs = list(itertools.combinations(languages, 2))

    records: list[SimilarityRecord] = []
    excluded: list[tuple[str, str]] = []
    # raw CKA per (item, language pair), used for the CKA level table
    cka_raw: dict[tuple[str, str], dict[str, float]] = {}
    total = 0

    for seq_id in bundle.ids:
        item = _Item(bundle, seq_id)
        units = [(seq_id, all_pairs)] if cfg.reference else [
            (seq_id if len(all_pairs) == 1 else f"{seq_id}|{a}|{b}", [(a, b)]) for a, b in all_pairs
        ]
        for pair_id, pairs in units:
            total += 1
            short = [f"{a}-{b}" for a, b in pairs if not filter_min_shared(item.alignment(a, b), cfg.min_shared)]
            if short:
                excluded.append((pair_id, f"fewer than {cfg.min_shared} shared tokens: {', '.join(short)}"))
                continue
            sims = {m: {frozenset(p): item.similarity(*p, m, layers) for p in pairs} for m in cfg.metrics}
            if Metric.LINEAR_CKA in sims:
                for (a, b) in pairs:
                    cka_raw.setdefault((a, b), {})[seq_id] = sims[Metric.LINEAR_CKA][frozenset((a, b))]
            records.append(_make_record(cfg, item, pair_id, pairs, languages, sims))

    report = AuditReport(cfg, layers, languages, records, excluded, total)
    report.cka_levels = _cka_levels(cfg, languages, cka_raw)
    for m in cfg.metrics:
        try:
            report.rows[m.value] = confound_table(
                records, m.value, ci_method=cfg.ci_method, B=cfg.bootstrap_b, seed=cfg.seed
            )
        except ValueError as exc:
            log.warning("regression for %s skipped: %s", m.value, exc)
            report.regression_errors[m.value] = str(exc)
    return report


def _make_record(cfg, item: _Item, pair_id, pairs, languages, sims) -> SimilarityRecord:
    if cfg.reference is None:
        (a, b), = pairs
        langs = [a, b]
        shared = shared_token_fraction(item.tokens(a), item.tokens(b), cfg.shared_level)
        similarity = {m.value: s[frozenset((a, b))] for m, s in sims.items()}
    else:
        langs = languages
        targets = [lang for lang in languages if lang != cfg.reference]
        shared = float(np.mean([
            shared_token_fraction(item.tokens(cfg.reference), item.tokens(t), cfg.shared_level) for t in targets
        ]))
        similarity = {
            m.value: float(np.mean([
                python_proximity(s, t, languages, cfg.reference, cfg.exclude_reference_baseline).value
                for t in targets
            ]))
            for m, s in sims.items()
        }
    lengths = [len(item.tokens(lang)) for lang in langs]
    lo, hi = min(lengths), max(lengths)
    return SimilarityRecord(
        pair_id=pair_id,
        similarity=similarity,
        length_ratio=lo / hi,
        depth_range=_depth_range([item.depth(lang) for lang in langs]),
        shared_fraction=shared,
        lengths=(lo, hi),
    )


def _cka_levels(cfg, languages, cka_raw) -> list[CkaLevel]:
    def level(name: str, values: list[float]) -> CkaLevel:
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if arr.size > 1 else math.nan
        return CkaLevel(name, float(arr.mean()), std, int(arr.size))

    out = []
    if cfg.reference is None:
        for (a, b), per_id in cka_raw.items():
            out.append(level(f"{a} vs {b}", list(per_id.values())))
        return out
    targets = [lang for lang in languages if lang != cfg.reference]
    pooled: dict[str, list[float]] = {}
    for t in targets:
        key = (cfg.reference, t) if (cfg.reference, t) in cka_raw else (t, cfg.reference)
        per_id = cka_raw.get(key, {})
        if per_id:
            out.append(level(f"{cfg.reference} vs {t}", list(per_id.values())))
        for seq_id, v in per_id.items():
            pooled.setdefault(seq_id, []).append(v)
    if len(targets) > 1 and pooled:
        out.append(level(
            f"{cfg.reference} vs {{{', '.join(targets)}}}",
            [float(np.mean(v)) for v in pooled.values()],
        ))
    return out


def audit_to_dir(cfg: AuditConfig) -> tuple[AuditReport, Path]:
    from .report import emit_report

    if cfg.out_dir is None:
        raise ValueError("out_dir not set")
    report = run_audit(cfg)
    return report, emit_report(report, cfg.out_dir)
