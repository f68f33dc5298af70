"""Named, independent random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("segments", "durations", "cognitive", "interrupts", "knowledge", "tutor")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for ``name`` under ``seed``.

    Streams are keyed by a CRC of the name, so adding draws to one stream never
    shifts another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


class Streams:
    """Lazily created per-subsystem generators for one session."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            self._gens[name] = stream(self.seed, name)
        return self._gens[name]


def derive_seed(root: int, index: int) -> int:
    """Child seed for item ``index`` of a batch rooted at ``root``."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
