"""Deterministic seed derivation.

Every seed used by a run is ``derive_seed(master, *counters)``: the master seed
and a tuple of small non-negative integers (repetition index, stream tag,
network id, class column, ...) are fed to numpy's ``SeedSequence`` and the
first 32-bit word of its state is the derived seed. Any sub-result can be
reproduced from the master seed and its counter path alone.
"""

from __future__ import annotations

import numpy as np

# stream tags used as the second counter
SPLIT_STREAM = 0
DETECTOR_STREAM = 1
EXPLORE_STREAM = 2


def derive_seed(master: int, *counters: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, counters)]).generate_state(1)[0])
