"""Mean-pooled cosine length artifact: theory, synthetic checks, and confound audits."""

from .core import LayerRange, PooledVector, Pooling, TokenMatrix, last_token_pool, mean_pool, middle_layers
from .metrics import Metric, cosine, linear_cka, pairwise_similarity, python_proximity, rv_coefficient
from .theory import AnisotropyParams, LengthPair, anisotropy_ratio, expected_cosine, taylor_cosine

__version__ = "0.1.0"

__all__ = [
    "AnisotropyParams",
    "LayerRange",
    "LengthPair",
    "Metric",
    "PooledVector",
    "Pooling",
    "TokenMatrix",
    "anisotropy_ratio",
    "cosine",
    "expected_cosine",
    "last_token_pool",
    "linear_cka",
    "mean_pool",
    "middle_layers",
    "pairwise_similarity",
    "python_proximity",
    "rv_coefficient",
    "taylor_cosine",
]
