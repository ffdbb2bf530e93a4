"""Counter-based random streams with deterministic substream derivation.

Every stochastic component in the package draws from a `numpy` Philox
generator derived from a user seed plus a string/int path.  Distinct paths
give statistically independent streams, so parallel workers and independent
model fits never share randomness, and any result is bit-reproducible from
(seed, path) alone.
"""

from __future__ import annotations

import numpy as np

_MASK32 = 0xFFFFFFFF


def _spawn_key(path: tuple) -> tuple[int, ...]:
    """Encode a mixed str/int path as a collision-safe uint32 spawn key."""
    words: list[int] = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            value = int(part)
            if value < 0:
                raise ValueError(f"path components must be non-negative, got {value}")
            words.append(0)  # tag: integer component
            words.append(value & _MASK32)
            words.append((value >> 32) & _MASK32)
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            words.append(1)  # tag: string component
            words.append(len(raw))
            padded = raw + b"\x00" * (-len(raw) % 4)
            words.extend(int(w) for w in np.frombuffer(padded, dtype="<u4"))
        else:
            raise TypeError(f"unsupported path component type: {type(part)!r}")
    return tuple(words)


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for `seed` refined by a substream path."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(path))


def substream(seed: int, *path) -> np.random.Generator:
    """Independent Philox generator for the given seed and path."""
    return np.random.Generator(np.random.Philox(seed=seed_sequence(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """Derive a child integer seed, itself usable as a stream root."""
    return int(seed_sequence(seed, *path).generate_state(2, dtype=np.uint64)[0])
