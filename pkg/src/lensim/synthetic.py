"""Model-free check of the length artifact on random anisotropic sequences."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .core import TokenMatrix, mean_pool
from .metrics import cosine, linear_cka
from .theory import AnisotropyParams, LengthPair, expected_cosine


@dataclass(frozen=True)
class SyntheticConfig:
    params: AnisotropyParams
    n_pairs: int = 200
    base_length: int = 100
    ratio_lo: float = 0.3
    ratio_hi: float = 1.0
    seed: int = 0
    random_direction: bool = False

    def __post_init__(self):
        if not 0 < self.ratio_lo <= self.ratio_hi <= 1:
            raise ValueError(f"need 0 < ratio_lo <= ratio_hi <= 1, got ({self.ratio_lo}, {self.ratio_hi})")
        if self.n_pairs < 1 or self.base_length < 1:
            raise ValueError("n_pairs and base_length must be >= 1")


BASELINE_CONFIG = SyntheticConfig(AnisotropyParams(mu_norm=10.0, sigma=1.0, dim=4096))


@dataclass(frozen=True)
class SyntheticRecord:
    pair_index: int
    ratio: float
    len_a: int
    len_b: int
    cosine: float
    cka: float  # nan when undefined (sigma = 0 leaves nothing after centering)


@dataclass(frozen=True)
class TheoryComparison:
    mean_deviation: float
    max_abs_deviation: float
    deviations: tuple[float, ...]
    predicted: tuple[float, ...]


def shared_direction(p: AnisotropyParams, seed: int | None = None) -> np.ndarray:
    """The mean vector: first coordinate axis scaled to ``mu_norm``, or a seeded
    random direction when ``seed`` is given."""
    if seed is None:
        mu = np.zeros(p.dim)
        mu[0] = p.mu_norm
        return mu
    v = _rng.substream(seed, 0xD1EC).standard_normal(p.dim)
    return v * (p.mu_norm / np.linalg.norm(v))


def generate_sequence(
    p: AnisotropyParams,
    length: int,
    rng: np.random.Generator,
    mu: np.ndarray | None = None,
) -> TokenMatrix:
    if length < 1:
        raise ValueError("length must be >= 1")
    if mu is None:
        mu = shared_direction(p)
    noise = rng.standard_normal((length, p.dim))
    if p.sigma != 1.0:
        noise *= p.sigma
    noise += mu
    return TokenMatrix._trusted(noise)


def _run_pair(cfg: SyntheticConfig, index: int, mu: np.ndarray) -> SyntheticRecord:
    gen = _rng.substream(cfg.seed, index)
    r = float(gen.uniform(cfg.ratio_lo, cfg.ratio_hi))
    len_a = cfg.base_length
    len_b = math.floor(cfg.base_length / r)
    a = generate_sequence(cfg.params, len_a, gen, mu)
    b = generate_sequence(cfg.params, len_b, gen, mu)
    cos = cosine(mean_pool(a), mean_pool(b))
    k = min(len_a, len_b)
    if cfg.params.sigma == 0 or k < 2:
        cka = math.nan
    else:
        cka = linear_cka(a.prefix(k), b.prefix(k))
    return SyntheticRecord(index, r, len_a, len_b, cos, cka)


def run_synthetic_experiment(cfg: SyntheticConfig, workers: int = 1) -> list[SyntheticRecord]:
    """Draw ``n_pairs`` independent sequence pairs and score each.

    Pair ``i`` uses its own substream keyed by ``(seed, i)``: the length ratio is
    drawn first, then the two sequences. CKA compares the first
    ``min(len_a, len_b)`` rows of each sequence. Output is ordered by pair index
    and identical for any ``workers``.
    """
    mu = shared_direction(cfg.params, cfg.seed if cfg.random_direction else None)
    if workers <= 1:
        return [_run_pair(cfg, i, mu) for i in range(cfg.n_pairs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: _run_pair(cfg, i, mu), range(cfg.n_pairs)))


def compare_to_theory(
    records: list[SyntheticRecord],
    p: AnisotropyParams,
    base_length: int,
) -> TheoryComparison:
    dev, pred = [], []
    for rec in records:
        if rec.len_a != base_length or rec.len_b != math.floor(base_length / rec.ratio):
            raise ValueError(
                f"record {rec.pair_index} lengths ({rec.len_a}, {rec.len_b}) "
                f"do not match base_length={base_length}"
            )
        expected = expected_cosine(p, LengthPair(rec.len_a, rec.len_b))
        pred.append(expected)
        dev.append(rec.cosine - expected)
    if not dev:
        raise ValueError("no records")
    arr = np.asarray(dev)
    return TheoryComparison(float(arr.mean()), float(np.abs(arr).max()), tuple(dev), tuple(pred))


def length_gradient_bundle(
    n_items: int = 80,
    params: AnisotropyParams = AnisotropyParams(mu_norm=8.0, sigma=1.0, dim=256),
    long_length: int = 64,
    ratio_lo: float = 0.2,
    ratio_hi: float = 1.0,
    languages: tuple[str, ...] = ("en", "xx"),
    n_layers: int = 4,
    shared_range: tuple[int, int] = (6, 12),
    seed: int = 0,
):
    """Parallel corpus of pure-noise sequences whose only structure is length.

    For item ``i`` (substream ``(seed, i)``) a ratio ``r`` is drawn; the first
    language gets ``round(r * long_length)`` tokens and every other language
    ``long_length``. A random number of shared surface forms (``shared_range``)
    is scattered through each sequence; all other tokens are language-specific.
    Each sequence also carries a random ``depth`` covariate.
    """
    from .bundle import make_bundle

    mu = shared_direction(params)
    items = []
    for i in range(n_items):
        gen = _rng.substream(seed, i)
        r = float(gen.uniform(ratio_lo, ratio_hi))
        n_shared = int(gen.integers(shared_range[0], shared_range[1] + 1))
        short = max(n_shared, round(r * long_length))
        for j, lang in enumerate(languages):
            length = short if j == 0 else long_length
            tokens = [f"{lang}_{t}" for t in range(length)]
            for k, pos in enumerate(gen.choice(length, size=n_shared, replace=False)):
                tokens[int(pos)] = f"w{k}"
            layers = np.stack([generate_sequence(params, length, gen, mu).values for _ in range(n_layers)])
            items.append((f"item{i:04d}", lang, layers, tokens, float(gen.integers(2, 12))))
    return make_bundle(items, generator="length_gradient_bundle", seed=seed)
