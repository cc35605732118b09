"""Deterministic, replayable random streams.

Every stochastic operation in the package draws from a stream derived
from an integer root seed plus a path of labels, e.g.
``stream(seed, "codebook", 17)``.  Streams are independent, stable
across processes and platforms (counter-based Philox), and never touch
any global generator state.  This is what lets an encoder and a decoder
regenerate identical codebooks and identical trained codes from a
shared seed.
"""

import hashlib

import numpy as np


def _label_words(label) -> list[int]:
    if isinstance(label, (int, np.integer)):
        data = b"i" + int(label).to_bytes(16, "little", signed=True)
    elif isinstance(label, str):
        data = b"s" + label.encode("utf-8")
    else:
        raise TypeError(f"stream labels must be int or str, got {type(label)!r}")
    digest = hashlib.sha256(data).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def child_seed(seed: int, *path) -> int:
    """Derive a stable 63-bit child seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for label in path:
        for w in _label_words(label):
            h.update(w.to_bytes(4, "little"))
    return int.from_bytes(h.digest()[:8], "little") >> 1


def stream(seed: int, *path) -> np.random.Generator:
    """Independent Philox generator for (seed, *path)."""
    words = []
    for label in path:
        words.extend(_label_words(label))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(words))
    return np.random.Generator(np.random.Philox(ss))
