"""Counter-based, splittable random streams.

Every random draw in the library comes from a :class:`RngStream`, which keys a
Philox generator with ``(master_seed, stream_id)``. The Philox counter plays the
role of the draw index, so a stream replays identically no matter which worker
or in which order it is consumed. Sub-streams are derived by hashing labels into
a new ``stream_id``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(stream_id: int, labels: tuple) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(stream_id.to_bytes(8, "little"))
    for label in labels:
        if isinstance(label, (int, np.integer)):
            h.update(b"i" + int(label).to_bytes(16, "little", signed=True))
        else:
            h.update(b"s" + str(label).encode() + b"\0")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def child(self, *labels) -> "RngStream":
        """Derive an independent sub-stream identified by ``labels``."""
        return RngStream(self.master_seed, _mix(self.stream_id, labels))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at draw index 0 of this stream."""
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    @property
    def seed_label(self) -> str:
        return f"{self.master_seed}:{self.stream_id}"


def as_stream(rng) -> RngStream:
    """Accept an RngStream or a plain integer seed."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))
