"""Seeded, splittable random streams.

Every stream is a Philox4x64 counter-based generator keyed by
``SeedSequence([seed, *keys])``. Substreams are addressed by integer keys
(e.g. a pair or replicate index), so results never depend on the order in
which they are drawn or on how work is scheduled across threads.

Gaussian variates come from NumPy's ``Generator.standard_normal`` (a 256-layer
ziggurat driven by the Philox stream). It is integer-based and reproduces the
same values on every platform for a given NumPy release.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
