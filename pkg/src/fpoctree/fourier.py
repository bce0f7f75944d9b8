"""Real cosine/sine time basis for frame series, with two forward transforms.

Frame indices are 1-based everywhere: a length-T series covers t = 1..T.
The canonical forward transform is the ridge least-squares fit
(``fit_fourier``); the literal 1/T-normalized summation (``dft_paper``) is
kept for fidelity comparisons since it attenuates non-DC terms by half and
does not invert the synthesis basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE_LAMBDA = 1e-8


@dataclass(frozen=True)
class FourierBasisSpec:
    """n retained basis functions over a T-frame sequence."""

    n: int
    T: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.T < 1:
            raise ValueError("need n >= 1 and T >= 1")


def idft_basis(i: int, t: int, T: int) -> float:
    """Synthesis basis value: cos(i*pi*t/T) for even i, sin((i+1)*pi*t/T) for odd i."""
    if i < 0:
        raise ValueError("basis index must be >= 0")
    if not 1 <= t <= T:
        raise ValueError(f"frame index {t} outside 1..{T}")
    if i % 2 == 0:
        return float(np.cos(i * np.pi * t / T))
    return float(np.sin((i + 1) * np.pi * t / T))


def idft_matrix(n: int, T: int) -> np.ndarray:
    """Synthesis matrix [T, n]; row t-1 holds the basis values at frame t."""
    if n < 1 or T < 1:
        raise ValueError("need n >= 1 and T >= 1")
    i = np.arange(n)
    t = np.arange(1, T + 1)[:, None]
    freq = np.where(i % 2 == 0, i, i + 1)
    args = freq * np.pi * t / T
    return np.where(i % 2 == 0, np.cos(args), np.sin(args))


def idft_weights(n: int, t: int, T: int) -> np.ndarray:
    """Basis values [n] at a single frame t."""
    if not 1 <= t <= T:
        raise ValueError(f"frame index {t} outside 1..{T}")
    return idft_matrix(n, T)[t - 1]


def dft_paper(series: np.ndarray, n: int) -> np.ndarray:
    """Literal forward transform: k_i = sum_t series(t) * (1/T) * basis_i(t).

    Operates on the trailing axis of ``series``.
    """
    series = np.asarray(series, dtype=float)
    T = series.shape[-1]
    analysis = idft_matrix(n, T) / T
    return series @ analysis


def fourier_fit_matrix(n: int, T: int) -> np.ndarray:
    """Ridge least-squares fit operator [n, T]: k = M @ series.

    The ridge term absorbs degenerate columns (sin(pi*t) vanishes at every
    integer frame, so the basis index just below Nyquist is identically zero
    for even T). One iterative-refinement pass removes the ridge bias on the
    well-conditioned directions, keeping e.g. the DC coefficient equal to the
    series mean to machine precision.
    """
    basis = idft_matrix(n, T)
    gram = basis.T @ basis + RIDGE_LAMBDA * np.eye(n)
    m = np.linalg.solve(gram, basis.T)
    return m + np.linalg.solve(gram, basis.T - (basis.T @ basis) @ m)


def fit_fourier(series: np.ndarray, n: int) -> np.ndarray:
    """Least-squares coefficients [..., n] for series values on the trailing axis."""
    series = np.asarray(series, dtype=float)
    if n < 1:
        raise ValueError("need n >= 1")
    T = series.shape[-1]
    return series @ fourier_fit_matrix(n, T).T


def reconstruct_series(k: np.ndarray, t: int, T: int) -> np.ndarray:
    """Synthesize the value at frame t from coefficients on the trailing axis."""
    k = np.asarray(k, dtype=float)
    w = idft_weights(k.shape[-1], t, T)
    return k @ w
