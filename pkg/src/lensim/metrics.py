"""Similarity metrics between sequences and the proximity dependent variable."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import LayerRange, PooledVector, TokenMatrix, mean_pool

BOUNDARY_SLACK = 1e-9


class Metric(enum.Enum):
    MEAN_POOLED_COSINE = "cosine"
    LINEAR_CKA = "cka"
    RV = "rv"

    @property
    def needs_alignment(self) -> bool:
        return self is not Metric.MEAN_POOLED_COSINE


@dataclass(frozen=True)
class SimilarityValue:
    metric: Metric
    value: float
    layer_index: int


@dataclass(frozen=True)
class ProximityScore:
    target_language: str
    value: float
    metric: Metric | None = None


def cosine(a: PooledVector, b: PooledVector) -> float:
    x, y = a.values, b.values
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine undefined for a zero-norm vector")
    c = float(np.dot(x / nx, y / ny))
    return min(1.0, max(-1.0, c))


def _paired_values(x: TokenMatrix, y: TokenMatrix, center: bool) -> tuple[np.ndarray, np.ndarray]:
    if x.length != y.length:
        raise ValueError(f"row count mismatch: {x.length} vs {y.length}")
    if x.length < 2:
        raise ValueError("matrix metrics need at least 2 aligned positions")
    a, b = x.values, y.values
    if center:
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    if not np.any(a) or not np.any(b):
        raise ValueError("all-zero (centered) matrix: similarity is undefined")
    return a, b


def _clamp_unit(value: float, name: str) -> float:
    if value < -BOUNDARY_SLACK or value > 1.0 + BOUNDARY_SLACK:
        raise ArithmeticError(f"{name} = {value!r} outside [0, 1]")
    return min(1.0, max(0.0, value))


def linear_cka(x: TokenMatrix, y: TokenMatrix, center: bool = True) -> float:
    """Linear CKA ``||Y'X||_F^2 / (||X'X||_F ||Y'Y||_F)`` on position-aligned rows.

    Columns are mean-centered first unless ``center=False``. When ``T < d`` the
    products are evaluated through the ``T x T`` Gram matrices, which give the same
    Frobenius norms at lower cost.
    """
    a, b = _paired_values(x, y, center)
    if a.shape[0] < a.shape[1] or a.shape[0] < b.shape[1]:
        ka, kb = a @ a.T, b @ b.T
        cross = float(np.sum(ka * kb))
        norm_a, norm_b = np.linalg.norm(ka), np.linalg.norm(kb)
    else:
        cross = float(np.sum((b.T @ a) ** 2))
        norm_a, norm_b = np.linalg.norm(a.T @ a), np.linalg.norm(b.T @ b)
    return _clamp_unit(cross / (norm_a * norm_b), "linear CKA")


def rv_coefficient(x: TokenMatrix, y: TokenMatrix) -> float:
    """RV coefficient ``tr(Sxy Syx) / sqrt(tr(Sxx^2) tr(Syy^2))`` of column-centered data.

    The ``1/(T-1)`` factor of the scatter matrices cancels and is omitted.
    """
    a, b = _paired_values(x, y, center=True)
    s_xy = a.T @ b
    s_xx = a.T @ a
    s_yy = b.T @ b
    num = np.trace(s_xy @ s_xy.T)
    den = np.sqrt(np.trace(s_xx @ s_xx) * np.trace(s_yy @ s_yy))
    return _clamp_unit(float(num / den), "RV coefficient")


def pairwise_similarity(
    x: TokenMatrix,
    y: TokenMatrix,
    metric: Metric,
    alignment: tuple[Sequence[int], Sequence[int]] | None = None,
) -> SimilarityValue:
    """Similarity of two sequences at one layer.

    ``alignment`` is a pair of position lists ``(idx_x, idx_y)`` (or any object with
    ``idx_a``/``idx_b``). Mean-pooled cosine ignores it; the matrix metrics require it
    whenever the two sequences differ in length.
    """
    if metric is Metric.MEAN_POOLED_COSINE:
        value = cosine(mean_pool(x), mean_pool(y))
    else:
        if alignment is not None:
            idx_x, idx_y = getattr(alignment, "idx_a", None), getattr(alignment, "idx_b", None)
            if idx_x is None:
                idx_x, idx_y = alignment
            if len(idx_x) != len(idx_y):
                raise ValueError("alignment lists differ in length")
            if len(idx_x) < 2:
                raise ValueError(f"{metric.name} needs >= 2 aligned positions, got {len(idx_x)}")
            x, y = x.select_rows(idx_x), y.select_rows(idx_y)
        elif x.length != y.length:
            raise ValueError(
                f"{metric.name} on unequal lengths ({x.length} vs {y.length}) needs an alignment"
            )
        if metric is Metric.LINEAR_CKA:
            value = linear_cka(x, y)
        else:
            value = rv_coefficient(x, y)
    return SimilarityValue(metric, value, x.layer_index)


def _pair_key(a: str, b: str) -> frozenset[str]:
    return frozenset((a, b))


def python_proximity(
    sims: Mapping[frozenset[str], float],
    target: str,
    languages: Sequence[str],
    reference: str = "python",
    exclude_reference: bool = False,
) -> ProximityScore:
    """Similarity of ``target`` to the reference language minus its mean similarity
    to the other languages.

    By default the baseline averages over every language except ``target`` (so it
    includes the reference) with denominator ``|S| - 1``. ``exclude_reference=True``
    drops the reference from the baseline and divides by ``|S| - 2``.
    """
    langs = list(dict.fromkeys(languages))
    if reference not in langs:
        raise ValueError(f"reference language {reference!r} not in {langs}")
    if target == reference or target not in langs:
        raise ValueError(f"invalid target language {target!r}")

    def sim(other: str) -> float:
        key = _pair_key(other, target)
        if key not in sims:
            raise KeyError(f"missing similarity for pair ({other}, {target})")
        return float(sims[key])

    others = [lang for lang in langs if lang != target]
    if exclude_reference:
        others = [lang for lang in others if lang != reference]
        if not others:
            raise ValueError("baseline excluding the reference needs >= 3 languages")
    baseline = sum(sim(lang) for lang in others) / len(others)
    return ProximityScore(target, sim(reference) - baseline)


def aggregate_over_layers(values: Sequence[SimilarityValue], layers: LayerRange) -> float:
    by_layer = {v.layer_index: v.value for v in values}
    missing = [i for i in layers if i not in by_layer]
    if missing:
        raise ValueError(f"no similarity for layers {missing}")
    return float(np.mean([by_layer[i] for i in layers]))
