"""Shared-surface-form token alignment and the covariates derived from token lists."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class AlignedPositions:
    """Paired row indices into two sequences.

    ``idx_a`` is strictly increasing. ``idx_b`` holds distinct indices but may
    cross when different surface forms appear in opposite orders.
    """

    idx_a: tuple[int, ...]
    idx_b: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "idx_a", tuple(int(i) for i in self.idx_a))
        object.__setattr__(self, "idx_b", tuple(int(i) for i in self.idx_b))
        if len(self.idx_a) != len(self.idx_b):
            raise ValueError("aligned index lists differ in length")
        if any(i < 0 for i in self.idx_a + self.idx_b):
            raise ValueError("negative position in alignment")
        if any(j <= i for i, j in zip(self.idx_a, self.idx_a[1:])):
            raise ValueError("idx_a must be strictly increasing")
        if len(set(self.idx_b)) != len(self.idx_b):
            raise ValueError("idx_b contains repeated positions")

    def __len__(self):
        return len(self.idx_a)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.idx_a, self.idx_b))

    def check_bounds(self, len_a: int, len_b: int) -> None:
        if (self.idx_a and max(self.idx_a) >= len_a) or (self.idx_b and max(self.idx_b) >= len_b):
            raise IndexError(f"alignment out of range for lengths ({len_a}, {len_b})")


def shared_token_positions(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> AlignedPositions:
    """Pair the k-th occurrence of each surface form in ``a`` with its k-th occurrence in ``b``.

    >>> shared_token_positions(["x", "y", "x"], ["x", "z", "x", "x"])
    AlignedPositions(idx_a=(0, 2), idx_b=(0, 2))
    """
    if not tokens_a or not tokens_b:
        raise ValueError("token lists must be non-empty")
    where_b: dict[str, list[int]] = defaultdict(list)
    for j, tok in enumerate(tokens_b):
        where_b[tok].append(j)
    seen: Counter[str] = Counter()
    idx_a, idx_b = [], []
    for i, tok in enumerate(tokens_a):
        k = seen[tok]
        seen[tok] += 1
        positions = where_b.get(tok)
        if positions is not None and k < len(positions):
            idx_a.append(i)
            idx_b.append(positions[k])
    return AlignedPositions(tuple(idx_a), tuple(idx_b))


def filter_min_shared(p: AlignedPositions, k: int = 3) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return len(p) >= k


def shared_token_fraction(tokens_a: Sequence[str], tokens_b: Sequence[str], level: str = "type") -> float:
    """Overlap of surface forms between two token lists.

    ``level="type"`` is the Jaccard index of the two vocabularies. ``level="token"``
    is the share of all token occurrences that are matched by
    :func:`shared_token_positions` (``2 * aligned / (|a| + |b|)``).
    """
    if not tokens_a or not tokens_b:
        raise ValueError("token lists must be non-empty")
    if level == "type":
        ta, tb = set(tokens_a), set(tokens_b)
        return len(ta & tb) / len(ta | tb)
    if level == "token":
        matched = sum((Counter(tokens_a) & Counter(tokens_b)).values())
        return 2.0 * matched / (len(tokens_a) + len(tokens_b))
    raise ValueError(f"unknown level {level!r}")


def length_ratio(tokens_a: Sequence, tokens_b: Sequence) -> float:
    if not tokens_a or not tokens_b:
        raise ValueError("token lists must be non-empty")
    m, n = len(tokens_a), len(tokens_b)
    return min(m, n) / max(m, n)
