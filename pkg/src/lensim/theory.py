"""Closed-form predictions for the expected cosine of mean-pooled anisotropic sequences.

Token states are modelled as ``h = mu + sigma * eps`` with isotropic noise. Everything
here depends on the parameters only through the anisotropy ratio
``rho = sigma**2 * d / ||mu||**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class AnisotropyParams:
    mu_norm: float
    sigma: float
    dim: int

    def __post_init__(self):
        if not self.mu_norm > 0:
            raise ValueError(f"mu_norm must be > 0, got {self.mu_norm}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    @classmethod
    def from_ratio(cls, rho: float) -> "AnisotropyParams":
        """Parameters with unit mean norm and ``d = 1`` realising a given ratio."""
        if rho < 0:
            raise ValueError("rho must be >= 0")
        return cls(mu_norm=1.0, sigma=math.sqrt(rho), dim=1)


@dataclass(frozen=True)
class LengthPair:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"lengths must be >= 1, got ({self.m}, {self.n})")


def anisotropy_ratio(p: AnisotropyParams) -> float:
    return p.sigma ** 2 * p.dim / p.mu_norm ** 2


def expected_cosine(p: AnisotropyParams, lengths: LengthPair) -> float:
    rho = anisotropy_ratio(p)
    return 1.0 / (math.sqrt(1.0 + rho / lengths.m) * math.sqrt(1.0 + rho / lengths.n))


def taylor_cosine(p: AnisotropyParams, lengths: LengthPair) -> float:
    """First-order expansion; only meaningful while ``rho * (1/m + 1/n)`` is small."""
    rho = anisotropy_ratio(p)
    return 1.0 - 0.5 * rho * (1.0 / lengths.m + 1.0 / lengths.n)


def artifact_signal(lengths: LengthPair) -> float:
    return abs(1.0 / lengths.m - 1.0 / lengths.n)


def taylor_envelope(p: AnisotropyParams, lengths: LengthPair) -> float:
    """Bound on ``|expected_cosine - taylor_cosine|`` valid for ``rho*(1/m+1/n) <= 0.2``."""
    x = anisotropy_ratio(p) * (1.0 / lengths.m + 1.0 / lengths.n)
    return 0.375 * x * x
