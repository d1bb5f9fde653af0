"""Error metrics between a true and an estimated covariance matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SquaredErrorRecord:
    frobenius_se: float
    grassmann_se: float
    trial_id: int = 0
    method: str = ""
    flags: list = field(default_factory=list)


def normalized_frobenius_se(r_true: np.ndarray, r_est: np.ndarray) -> float:
    """||R - R_hat||_F^2 / ||R||_F^2."""
    r_true = np.asarray(r_true)
    r_est = np.asarray(r_est)
    if r_true.shape != r_est.shape:
        raise ValueError("matrices must have the same shape")
    denom = np.linalg.norm(r_true, "fro") ** 2
    if denom == 0.0:
        raise ValueError("true matrix must be nonzero")
    return float(np.linalg.norm(r_true - r_est, "fro") ** 2 / denom)


def _canonical_frame(matrix: np.ndarray, rank: int, tie_tol: float = 1e-12):
    """Leading-``rank`` eigenvector frame with a deterministic ordering.

    Eigenvectors are phase-normalized (largest-magnitude component made real
    positive) and groups of eigenvalues equal within ``tie_tol`` (relative
    to the largest) are ordered lexicographically, so exactly degenerate
    spectra still yield a reproducible frame.  Returns (frame, tied) where
    ``tied`` reports an eigenvalue tie across the rank boundary.
    """
    w, v = np.linalg.eigh(matrix)
    w = w[::-1]
    v = v[:, ::-1]
    scale = max(abs(w[0]), 1.0)

    pivots = np.argmax(np.abs(v), axis=0)
    phases = v[pivots, np.arange(v.shape[1])]
    safe = np.where(np.abs(phases) > 0, phases, 1.0)
    v = v * (np.abs(safe) / safe)

    # stable lexicographic order inside tied groups
    start = 0
    while start < w.size:
        stop = start + 1
        while stop < w.size and abs(w[start] - w[stop]) <= tie_tol * scale:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            keys = np.concatenate([block.real, block.imag], axis=0)
            order = np.lexsort(keys[::-1])
            v[:, start:stop] = block[:, order]
        start = stop

    tied = rank < w.size and abs(w[rank - 1] - w[rank]) <= tie_tol * scale
    return v[:, :rank], bool(tied)


def grassmann_se(r_true: np.ndarray, r_est: np.ndarray,
                 energy_fraction: float = 0.9, return_info: bool = False):
    """Normalized chordal distance between dominant eigenspaces.

    The subspace rank is the smallest count of leading eigenvalues of the
    true matrix capturing ``energy_fraction`` of its trace; the same rank is
    used for both frames.  The value ||P - P_hat||_F^2 / (2r) lies in
    [0, 1] and equals sin^2 of the principal angle for one-dimensional
    subspaces.
    """
    r_true = np.asarray(r_true)
    r_est = np.asarray(r_est)
    if r_true.shape != r_est.shape:
        raise ValueError("matrices must have the same shape")
    w = np.linalg.eigvalsh(r_true)[::-1]
    w = np.maximum(w, 0.0)
    total = w.sum()
    if total == 0.0:
        raise ValueError("true matrix must be nonzero")
    rank = int(np.searchsorted(np.cumsum(w), energy_fraction * total) + 1)
    rank = min(rank, w.size)

    frame_true, _ = _canonical_frame(r_true, rank)
    frame_est, tied = _canonical_frame(r_est, rank)
    # ||P - P_hat||_F^2 = 2 r - 2 ||U^H U_hat||_F^2
    overlap = np.linalg.norm(frame_true.conj().T @ frame_est) ** 2
    value = float(np.clip((rank - overlap) / rank, 0.0, 1.0))
    if return_info:
        return value, tied
    return value
