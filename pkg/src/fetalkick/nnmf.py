"""Non-negative matrix factorization by multiplicative updates.

Factorizes a non-negative matrix V (here: one magnitude spectrogram) into
a basis matrix W and an abundance matrix H with V ~ WH and W, H >= 0,
minimizing the Frobenius objective ||V - WH||.  The classic multiplicative
update rules keep both factors non-negative and drive the objective
monotonically downward:

    H <- H * (W^T V) / (W^T W H + eps)
    W <- W * (V H^T) / (W H H^T + eps)

Each spectrogram is factorized independently; either factor can then be
rendered as a compact image feature in place of the full spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram
from .errors import NumericError

EPS = 1e-12


@dataclass
class FactorPair:
    """NNMF result: basis W (m x r), abundance H (r x n), and the error trace."""

    W: np.ndarray
    H: np.ndarray
    rank: int
    final_error: float
    error_trace: np.ndarray

    def reconstruction(self) -> np.ndarray:
        return self.W @ self.H


def _objective(V: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    return float(np.linalg.norm(V - W @ H))


def multiplicative_update(
    V: np.ndarray, W: np.ndarray, H: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One full update round (H first, then W against the new H)."""
    H = H * (W.T @ V) / (W.T @ W @ H + EPS)
    W = W * (V @ H.T) / (W @ (H @ H.T) + EPS)
    return W, H


def factorize(
    V: Spectrogram | np.ndarray,
    rank: int,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-4,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> FactorPair:
    """Factorize V into non-negative W (m x rank) and H (rank x n).

    Iteration stops at ``max_iter`` rounds or when the relative objective
    change drops below ``tol``.  Initialization is seeded uniform on (0, 1]
    unless an explicit ``init=(W0, H0)`` pair is supplied.
    """
    mat = V.magnitudes if isinstance(V, Spectrogram) else np.asarray(V, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("V must be a 2-D matrix")
    m, n = mat.shape
    if not 1 <= rank <= min(m, n):
        raise ValueError(f"rank {rank} out of range [1, {min(m, n)}]")
    if np.any(mat < 0):
        raise ValueError("V must be non-negative")

    if init is not None:
        W, H = (np.array(a, dtype=np.float64) for a in init)
        if W.shape != (m, rank) or H.shape != (rank, n):
            raise ValueError("init shapes do not match (m, rank)/(rank, n)")
        if np.any(W < 0) or np.any(H < 0):
            raise ValueError("init factors must be non-negative")
    else:
        rng = np.random.default_rng(seed)
        W = 1.0 - rng.random((m, rank))  # uniform on (0, 1]
        H = 1.0 - rng.random((rank, n))

    trace = []
    prev = None
    for _ in range(max_iter):
        W, H = multiplicative_update(mat, W, H)
        err = _objective(mat, W, H)
        if not np.isfinite(err):
            raise NumericError("NNMF objective diverged to a non-finite value")
        trace.append(err)
        if err == 0.0:
            break
        if prev is not None and abs(prev - err) < tol * prev:
            break
        prev = err

    return FactorPair(
        W=W,
        H=H,
        rank=rank,
        final_error=trace[-1] if trace else _objective(mat, W, H),
        error_trace=np.array(trace),
    )


def feature_of(fp: FactorPair, which: str) -> np.ndarray:
    """Select the basis ('W', m x r) or abundance ('H', r x n) factor."""
    key = which.upper() if isinstance(which, str) else which
    if key == "W":
        return fp.W
    if key == "H":
        return fp.H
    raise ValueError(f"which must be 'W' or 'H', got {which!r}")
