"""Named sub-seed derivation.

All randomness in the toolkit flows from one master seed.  Components draw
their own generator from a named sub-seed so that, e.g., changing the
network init does not perturb the data split.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(master: int, label: str) -> int:
    """Derive a stable 63-bit sub-seed for ``label`` from the master seed."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(subseed(master, label))
