"""Per-path random streams.

Every path draws from its own counter-based Philox generator keyed by
``(master_seed, stream, path_index)``, so a path set is reproducible and does
not depend on how paths are split across workers.
"""
from __future__ import annotations

import numpy as np

MARKET_STREAM = 0
ROA_STREAM = 1
PANEL_STREAM = 2


def path_rng(master_seed: int, path_index: int, stream: int = MARKET_STREAM) -> np.random.Generator:
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(path_index)])
    return np.random.Generator(np.random.Philox(seq))
