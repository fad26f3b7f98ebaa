"""Standardized regression, correlation, and interval estimates for confound audits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm

from . import rng as _rng

PREDICTORS = ("length_ratio", "depth_range", "shared_fraction")
# Relative tolerance on |R_ii| / |R_00| below which a pivoted column counts as dependent.
RANK_TOL = 1e-10
MAX_SKIP_FRACTION = 0.01


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionSpec:
    dependent: str
    predictors: tuple[str, ...]
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if not self.predictors:
            raise ValueError("need at least one predictor")
        if len(set(self.predictors)) != len(self.predictors):
            raise ValueError(f"duplicate predictor names in {self.predictors}")
        if self.dependent in self.predictors:
            raise ValueError(f"{self.dependent!r} is both dependent and predictor")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    method: str  # "bootstrap" or "fisher"

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval bounds out of order: ({self.lo}, {self.hi})")


@dataclass
class RegressionResult:
    betas: dict[str, float]
    r2: float
    n: int
    r2_length_only: float | None = None
    ci: dict[str, Interval] = field(default_factory=dict)
    p_proxy: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SimilarityRecord:
    """One unit of observation: similarity per metric plus confound covariates.

    ``depth_range`` is nan when no syntax-tree depth was supplied.
    """

    pair_id: str
    similarity: Mapping[str, float]
    length_ratio: float
    depth_range: float
    shared_fraction: float
    lengths: tuple[int, int] | None = None

    def __post_init__(self):
        if not 0 < self.length_ratio <= 1:
            raise ValueError(f"{self.pair_id}: length_ratio {self.length_ratio} outside (0, 1]")
        if self.lengths is not None:
            m, n = self.lengths
            expected = min(m, n) / max(m, n)
            if abs(expected - self.length_ratio) > 1e-12:
                raise ValueError(
                    f"{self.pair_id}: length_ratio {self.length_ratio} != min/max of {self.lengths}"
                )

    def value(self, column: str) -> float:
        if column in ("length_ratio", "depth_range", "shared_fraction"):
            return getattr(self, column)
        return self.similarity[column]


def records_to_columns(records: Sequence[SimilarityRecord], columns: Sequence[str]) -> dict[str, np.ndarray]:
    return {c: np.array([r.value(c) for r in records], dtype=np.float64) for c in columns}


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-d columns")
    if x.size < 3:
        raise ValueError(f"pearson needs at least 3 observations, got {x.size}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson undefined for a zero-variance column")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def zscore(col: np.ndarray, name: str = "column") -> np.ndarray:
    sd = col.std(ddof=1)
    if not sd > 0 or not np.isfinite(sd):
        raise ValueError(f"{name} has zero variance and cannot be standardized")
    return (col - col.mean()) / sd


def _design(columns: Mapping[str, np.ndarray], spec: RegressionSpec) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(columns[spec.dependent], dtype=np.float64)
    x = np.column_stack([np.asarray(columns[p], dtype=np.float64) for p in spec.predictors])
    n, p = x.shape
    if n <= p + 1:
        raise ValueError(f"need more than {p + 1} observations for {p} predictors, got {n}")
    bad = [c for c in (spec.dependent, *spec.predictors) if not np.all(np.isfinite(columns[c]))]
    if bad:
        raise ValueError(f"non-finite values in columns {bad}")
    if spec.standardize:
        y = zscore(y, spec.dependent)
        x = np.column_stack([zscore(x[:, j], spec.predictors[j]) for j in range(p)])
    else:
        # Unstandardized fits carry an explicit intercept in the last column.
        x = np.column_stack([x, np.ones(n)])
    return x, y


def _solve(x: np.ndarray, y: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, float]:
    q, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < x.shape[1]:
        # express the dropped columns in the kept basis to name the whole collinear group
        combo = scipy.linalg.solve_triangular(r[:rank, :rank], r[:rank, rank:]) if rank else np.zeros((0, 1))
        used = piv[:rank][np.any(np.abs(combo) > 1e-8, axis=1)]
        group = sorted({*used.tolist(), *piv[rank:].tolist()})
        label = [names[j] if j < len(names) else "intercept" for j in group]
        raise RankDeficiencyError(f"design is rank deficient; collinear columns: {label}")
    qty = q.T @ y
    coef = np.empty(x.shape[1])
    coef[piv] = scipy.linalg.solve_triangular(r, qty)
    resid = y - x @ coef
    centered = y - y.mean()
    r2 = 1.0 - float(resid @ resid) / float(centered @ centered)
    return coef, r2


def ols_standardized(columns: Mapping[str, np.ndarray] | Sequence[SimilarityRecord], spec: RegressionSpec) -> RegressionResult:
    """Least-squares fit of z-scored dependent on z-scored predictors.

    Standardization uses the sample (n-1) standard deviation, so the returned
    betas are standardized weights and no intercept is needed.
    """
    if not isinstance(columns, Mapping):
        columns = records_to_columns(columns, (spec.dependent, *spec.predictors))
    x, y = _design(columns, spec)
    coef, r2 = _solve(x, y, spec.predictors)
    betas = {name: float(b) for name, b in zip(spec.predictors, coef)}
    return RegressionResult(betas=betas, r2=min(1.0, max(0.0, r2)), n=len(y))


def r2_delta(columns, spec_small: RegressionSpec, spec_full: RegressionSpec) -> float:
    if spec_small.dependent != spec_full.dependent or not set(spec_small.predictors) <= set(spec_full.predictors):
        raise ValueError("specs are not nested")
    return ols_standardized(columns, spec_full).r2 - ols_standardized(columns, spec_small).r2


@dataclass(frozen=True)
class BootstrapDistribution:
    r2: np.ndarray
    betas: np.ndarray  # (replicates, predictors)
    skipped: int
    replicates: int


def _sorted_columns(columns, spec, order_key):
    if not isinstance(columns, Mapping):
        ids = [r.pair_id for r in columns]
        columns = records_to_columns(columns, (spec.dependent, *spec.predictors))
        order_key = ids if order_key is None else order_key
    if order_key is not None:
        order = np.argsort(np.asarray(order_key), kind="stable")
        columns = {k: np.asarray(v)[order] for k, v in columns.items()}
    return columns


def bootstrap_fits(
    columns,
    spec: RegressionSpec,
    replicates: int,
    seed: int,
    order_key: Sequence[str] | None = None,
    chunk: int = 256,
) -> BootstrapDistribution:
    """Case-resampling bootstrap of the standardized fit.

    Rows are first sorted by ``order_key`` (the pair ids when records are given)
    so results do not depend on input order. Replicate ``b`` draws its indices
    from substream ``(seed, b)``. Replicates whose resample has a constant column
    are skipped; more than 1% skipped is an error.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    columns = _sorted_columns(columns, spec, order_key)
    y_all = np.asarray(columns[spec.dependent], dtype=np.float64)
    x_all = np.column_stack([np.asarray(columns[p], dtype=np.float64) for p in spec.predictors])
    n, p = x_all.shape
    r2_out = np.full(replicates, np.nan)
    beta_out = np.full((replicates, p), np.nan)
    for start in range(0, replicates, chunk):
        stop = min(start + chunk, replicates)
        idx = np.stack([_rng.substream(seed, b).integers(0, n, size=n) for b in range(start, stop)])
        xb, yb = x_all[idx], y_all[idx]
        xm, ym = xb.mean(axis=1, keepdims=True), yb.mean(axis=1, keepdims=True)
        xs, ys = xb.std(axis=1, ddof=1, keepdims=True), yb.std(axis=1, ddof=1, keepdims=True)
        ok = np.all(xs[:, 0, :] > 0, axis=1) & (ys[:, 0] > 0)
        if not ok.any():
            continue
        zx = (xb[ok] - xm[ok]) / xs[ok]
        zy = (yb[ok] - ym[ok]) / ys[ok]
        q, r = np.linalg.qr(zx)
        diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
        full_rank = np.all(diag > RANK_TOL * np.abs(r[:, :1, 0]), axis=1)
        qty = np.einsum("bnp,bn->bp", q, zy)
        coef = np.full((zx.shape[0], p), np.nan)
        for i in np.flatnonzero(full_rank):
            coef[i] = scipy.linalg.solve_triangular(r[i], qty[i])
        ss_tot = np.einsum("bn,bn->b", zy, zy)
        r2 = np.einsum("bp,bp->b", qty, qty) / ss_tot
        r2[~full_rank] = np.nan
        rows = np.arange(start, stop)[ok]
        r2_out[rows] = np.clip(r2, 0.0, 1.0)
        beta_out[rows] = coef
    good = np.isfinite(r2_out)
    skipped = int(replicates - good.sum())
    if skipped > MAX_SKIP_FRACTION * replicates:
        raise ValueError(f"{skipped} of {replicates} bootstrap replicates were degenerate")
    return BootstrapDistribution(r2_out[good], beta_out[good], skipped, replicates)


def percentile_interval(samples: np.ndarray, level: float) -> tuple[float, float]:
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(samples, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def bootstrap_r2_ci(
    columns,
    spec: RegressionSpec,
    B: int = 5000,
    seed: int = 0,
    level: float = 0.95,
    order_key: Sequence[str] | None = None,
) -> tuple[float, float]:
    if B < 100:
        raise ValueError(f"B must be >= 100, got {B}")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    dist = bootstrap_fits(columns, spec, B, seed, order_key)
    return percentile_interval(dist.r2, level)


def fisher_r_ci(r: float, n: int, level: float = 0.95) -> tuple[float, float]:
    if not abs(r) < 1:
        raise ValueError(f"Fisher interval undefined for |r| = {abs(r)}")
    if n < 4:
        raise ValueError(f"Fisher interval needs n >= 4, got {n}")
    z = math.atanh(r)
    half = norm.ppf(0.5 + level / 2.0) / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def fisher_r2_ci(r: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Fisher-z interval for ``r`` mapped onto the R^2 scale.

    An ``r`` interval straddling zero maps to ``[0, max(lo^2, hi^2)]``.
    """
    lo, hi = fisher_r_ci(r, n, level)
    if lo <= 0 <= hi:
        return 0.0, max(lo * lo, hi * hi)
    a, b = lo * lo, hi * hi
    return min(a, b), max(a, b)


def normal_p_proxy(estimate: float, se: float) -> float:
    """Two-sided normal-approximation p-value of ``estimate / se`` (a proxy, not an exact test)."""
    if not se > 0:
        return 0.0 if estimate != 0 else 1.0
    return float(2.0 * norm.sf(abs(estimate / se)))


@dataclass
class ConfoundRow:
    """One metric's length-only fit, full fit and univariate r: one row of every regression table."""

    metric: str
    n: int
    length_only: RegressionResult
    full: RegressionResult
    r_univ: float
    full_predictors: tuple[str, ...]


def available_predictors(records: Sequence[SimilarityRecord]) -> tuple[str, ...]:
    """Covariates that are fully observed and non-constant across ``records``."""
    out = []
    for name in PREDICTORS:
        col = np.array([getattr(r, name) for r in records], dtype=np.float64)
        if np.all(np.isfinite(col)) and np.ptp(col) > 0:
            out.append(name)
    if "length_ratio" not in out:
        raise ValueError("length_ratio is constant or missing; nothing to regress on")
    return tuple(out)


def confound_table(
    records: Sequence[SimilarityRecord],
    metric: str,
    ci_method: str = "bootstrap",
    B: int = 5000,
    seed: int = 0,
    level: float = 0.95,
) -> ConfoundRow:
    """Length-only fit, full covariate fit, univariate r, and a CI for the length-only R^2.

    Covariates that are missing or constant (e.g. depth for natural language)
    are dropped from the full model. With ``ci_method="bootstrap"`` the betas
    also get normal-approximation p-value proxies from the bootstrap SE.
    """
    if len(records) < 10:
        raise ValueError(f"need at least 10 records, got {len(records)}")
    predictors = available_predictors(records)
    cols = records_to_columns(records, (metric, *predictors))
    ids = [r.pair_id for r in records]
    small = RegressionSpec(metric, ("length_ratio",))
    full_spec = RegressionSpec(metric, predictors)
    length_only = ols_standardized(cols, small)
    full = ols_standardized(cols, full_spec)
    full.r2_length_only = length_only.r2
    length_only.r2_length_only = length_only.r2
    r_univ = pearson(cols["length_ratio"], cols[metric])

    if ci_method == "bootstrap":
        dist = bootstrap_fits(cols, small, B, seed, order_key=ids)
        length_only.ci["r2"] = Interval(*percentile_interval(dist.r2, level), "bootstrap")
        se = float(dist.betas[:, 0].std(ddof=1))
        length_only.p_proxy["length_ratio"] = normal_p_proxy(length_only.betas["length_ratio"], se)
        dist_full = bootstrap_fits(cols, full_spec, B, seed, order_key=ids)
        full.ci["r2"] = Interval(*percentile_interval(dist_full.r2, level), "bootstrap")
        for j, name in enumerate(predictors):
            se = float(dist_full.betas[:, j].std(ddof=1))
            full.p_proxy[name] = normal_p_proxy(full.betas[name], se)
    elif ci_method == "fisher":
        length_only.ci["r2"] = Interval(*fisher_r2_ci(r_univ, len(records), level), "fisher")
        z = math.atanh(r_univ) * math.sqrt(len(records) - 3)
        length_only.p_proxy["length_ratio"] = float(2.0 * norm.sf(abs(z)))
    else:
        raise ValueError(f"unknown ci_method {ci_method!r}")
    full.ci.update({f"length_only_{k}": v for k, v in length_only.ci.items()})
    return ConfoundRow(metric, len(records), length_only, full, r_univ, predictors)
