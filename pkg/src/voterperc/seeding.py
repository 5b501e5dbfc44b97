"""Deterministic random-number plumbing.

Replica streams are split with the counter-based Philox generator keyed by
(root seed, replica index), so replica i's stream never depends on how many
replicas run or in which order.  The event engines consume uniforms from a
block reader so that the reference and the compiled engine read the exact
same stream in the exact same order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

PER_REPLICA_RULE = "philox(key=[seed, replica_index])"


def replica_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for one replica, derived from (seed, index) alone."""
    if index < 0:
        raise ValueError("replica index must be >= 0")
    key = np.array([int(seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class UniformBlocks:
    """Reads U[0,1) variates from a Generator in fixed-size blocks.

    Consumers may take values one at a time (`take`) or hand the current
    block to compiled code and report how many entries it used (`block`,
    `advance`).  Either way the underlying stream order is identical.
    """

    def __init__(self, rng: np.random.Generator, block_size: int = 1 << 15):
        if block_size <= 0:
            raise ValueError("block size must be positive")
        self.rng = rng
        self.block_size = int(block_size)
        self._buf = rng.random(self.block_size)
        self._pos = 0

    def _refill(self) -> None:
        self._buf = self.rng.random(self.block_size)
        self._pos = 0

    def take(self) -> float:
        if self._pos >= self._buf.shape[0]:
            self._refill()
        v = self._buf[self._pos]
        self._pos += 1
        return float(v)

    def ensure(self, k: int) -> None:
        """Guarantee k values remain in the current block.

        If fewer remain, the block tail is discarded and a fresh block is
        drawn.  Calling this before each multi-draw event keeps the stream
        positions of the reference and compiled engines identical: no
        event's draws ever straddle a block boundary.
        """
        if k > self.block_size:
            raise ValueError("k exceeds block size")
        if self._buf.shape[0] - self._pos < k:
            self._refill()

    def block(self) -> tuple[np.ndarray, int]:
        """Current buffer and read offset, refilling if exhausted."""
        if self._pos >= self._buf.shape[0]:
            self._refill()
        return self._buf, self._pos

    def advance(self, used: int) -> None:
        if used < 0 or self._pos + used > self._buf.shape[0]:
            raise ValueError("block over-consumed")
        self._pos += used


def exponential_from_uniform(u: float) -> float:
    # -log(1-u) maps [0,1) to [0,inf) without ever taking log(0)
    return -np.log1p(-u)
