"""Deterministic random-stream derivation.

Every stochastic stage derives its generator from (master seed, stable key
parts) so outputs depend only on inputs, never on call order, scheduling, or
Python hash randomization.  Keys are hashed with SHA-256 over a canonical
byte encoding; strings are length-prefixed so ("ab", "c") and ("a", "bc")
yield distinct streams.
"""

import hashlib

import numpy as np


def derive_stream(seed: int, *parts) -> np.random.Generator:
    """Return a PCG64 generator keyed by `seed` and the given parts.

    Parts may be ints or strings.  The same key always yields the same
    stream; distinct keys yield statistically independent streams.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for part in parts:
        if isinstance(part, (bool,)):
            raise TypeError("bool is not a valid stream key part")
        if isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(8, "little", signed=True))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
        else:
            raise TypeError(f"unsupported stream key part: {part!r}")
    words = np.frombuffer(h.digest()[:16], dtype=np.uint32)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))
