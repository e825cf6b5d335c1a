"""Planted test problems: low-rank quaternion matrices, sparse corruption, observation masks."""

from __future__ import annotations

import numpy as np

from .qmatrix import QMatrix


def planted_low_rank(m: int, n: int, r: int, rng=None) -> QMatrix:
    """Product of Gaussian m x r and r x n quaternion factors."""
    rng = np.random.default_rng(rng)
    return QMatrix.random(m, r, rng) @ QMatrix.random(r, n, rng)


def sparse_corruption(m: int, n: int, sparsity: float, magnitude: float, rng=None,
                      pure: bool = False) -> QMatrix:
    """Exactly round(sparsity m n) entries of modulus ``magnitude`` with random phase."""
    rng = np.random.default_rng(rng)
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError("sparsity must lie in [0, 1]")
    k = int(round(sparsity * m * n))
    sup = np.zeros(m * n, dtype=bool)
    sup[rng.choice(m * n, k, replace=False)] = True
    ph = rng.standard_normal((4, m, n))
    if pure:
        ph[0] = 0.0
    ph /= np.linalg.norm(ph, axis=0)
    return QMatrix(ph * magnitude * sup.reshape(m, n))


def observed_mask(m: int, n: int, frac: float, rng=None, min_per_line: int = 0) -> np.ndarray:
    """Boolean mask with round(frac m n) observed entries.

    With ``min_per_line = k`` every row and every column gets at least k
    observed entries, placed first by dealing k consecutive slots of a
    random column order to each row of a random row order (transposed when
    m < n); this uses k max(m, n) entries. The rest are drawn uniformly.
    """
    rng = np.random.default_rng(rng)
    total = int(round(frac * m * n))
    k = min_per_line
    if k > min(m, n):
        raise ValueError(f"cannot observe {k} entries per line of a {m} x {n} matrix")
    if k * max(m, n) > total:
        raise ValueError(f"{k} entries per row and column need {k * max(m, n)} > {total} observations")
    mask = np.zeros((m, n), dtype=bool)
    if k:
        big, small = max(m, n), min(m, n)
        rows, cols = rng.permutation(big), rng.permutation(small)
        slots = np.arange(big * k)
        i, j = rows[slots // k], cols[slots % small]
        if m >= n:
            mask[i, j] = True
        else:
            mask[j, i] = True
    have = int(mask.sum())
    free = np.flatnonzero(~mask.ravel())
    mask.ravel()[rng.choice(free, total - have, replace=False)] = True
    return mask
