"""Counter-based random streams: one Philox generator per run seed.

Stage ``t`` (0-based) of a run consumes uniforms ``2t`` (player 1) and
``2t + 1`` (player 2) of its stream, so a run's draws depend only on its seed
and never on how runs are grouped into batches or processes.
"""

from __future__ import annotations

import numpy as np

PLAYERS = 2


class StageUniforms:
    """Per-stage uniforms for a batch of runs, drawn in blocks."""

    def __init__(self, seeds, block=4096):
        seeds = [int(s) for s in seeds]
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be nonnegative")
        self._gens = [np.random.Generator(np.random.Philox(key=s)) for s in seeds]
        self._block = int(block)
        self._buf = np.empty((len(seeds), 0, PLAYERS))
        self._start = 0
        self._next = 0

    def stage(self, t):
        """Uniforms ``(runs, 2)`` for 0-based stage ``t``; stages must be requested in order."""
        if t != self._next:
            raise ValueError(f"stage {t} requested out of order (expected {self._next})")
        offset = t - self._start
        if offset >= self._buf.shape[1]:
            self._start = t
            offset = 0
            self._buf = np.stack(
                [g.random(self._block * PLAYERS).reshape(self._block, PLAYERS) for g in self._gens]
            )
        self._next += 1
        return self._buf[:, offset]


def sample_index(mixes, uniforms):
    """Inverse-CDF draw: the first index whose cumulative weight exceeds ``u``."""
    cdf = np.cumsum(mixes, axis=-1)
    idx = np.sum(uniforms[..., None] >= cdf[..., :-1], axis=-1)
    return idx
