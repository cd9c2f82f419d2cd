"""Counter-based random streams keyed by (master seed, purpose, entity).

Every stochastic draw in the package flows through one of these streams.
Because each stream's key is a stable hash of its label, adding nodes or
edges to a network never perturbs the draws of existing entities, and
episodes can be rolled out in any order (or in parallel) with identical
results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key64(label: str) -> tuple[int, int]:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:], "little"),
    )


def stream(master_seed: int, *labels: object) -> np.random.Generator:
    """Return an independent Philox generator for the given label path.

    Labels are joined into a single string key; typical usage is
    ``stream(seed, "transfer", edge_id, episode)``.
    """
    path = "/".join(str(x) for x in labels)
    k0, k1 = _key64(f"{master_seed}:{path}")
    return np.random.Generator(np.random.Philox(key=[k0, k1]))
