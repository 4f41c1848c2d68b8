"""Counter-based random streams keyed by hashed seed lineages.

Every random draw is addressed by ``(child seed, stream tag, step)``, so the
numbers a replica sees do not depend on how replicas are scheduled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["NOISE_TAG", "INITIAL_TAG", "NoiseStream", "SeedLineage", "child_seed"]

NOISE_TAG = 0
INITIAL_TAG = 1
PROBE_TAG = 2

_MASK64 = (1 << 64) - 1


def child_seed(master_seed, study="default", n=0, replica=0):
    """64-bit BLAKE2b hash of ``(master_seed, study, n, replica)``."""
    msg = f"{int(master_seed) & _MASK64}|{study}|{int(n)}|{int(replica)}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SeedLineage:
    master_seed: int
    replica: int = 0
    study: str = "default"
    n: int = 0

    @property
    def child_seed(self):
        return child_seed(self.master_seed, self.study, self.n, self.replica)

    def stream(self):
        return NoiseStream(self.child_seed)

    def to_dict(self):
        return {
            "master_seed": int(self.master_seed),
            "replica": int(self.replica),
            "study": self.study,
            "n": int(self.n),
            "child_seed": self.child_seed,
        }


class NoiseStream:
    """Philox generators at counter ``[0, 0, tag, step]`` under a fixed key."""

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64

    def generator(self, tag, step=0):
        bitgen = np.random.Philox(
            key=np.array([self.seed, 0], dtype=np.uint64),
            counter=np.array([0, 0, tag, step], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def increments(self, step, n, dim, dt):
        """Brownian increments with variance ``dt`` for one time step."""
        return np.sqrt(dt) * self.generator(NOISE_TAG, step).standard_normal((n, dim))

    def initial(self):
        return self.generator(INITIAL_TAG, 0)
