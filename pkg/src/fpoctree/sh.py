"""Real spherical harmonics: evaluation, color decoding, least-squares projection.

Convention: real orthonormal basis (integral of Y^2 over the sphere is 1),
Condon-Shortley phase omitted, entries ordered lexicographically by (l, m):
(0,0), (1,-1), (1,0), (1,1), (2,-2), ...
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_LMAX = 4
RIDGE_LAMBDA = 1e-8
LOGIT_EPS = 1e-4

SH_C0 = 0.28209479177387814  # 1/(2 sqrt(pi))
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    1.0925484305920792,
    0.31539156525252005,
    1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    0.5900435899266435,
    2.890611442640554,
    0.4570457994644658,
    0.3731763325901154,
    0.4570457994644658,
    1.445305721320277,
    0.5900435899266435,
)
SH_C4 = (
    2.5033429417967046,
    1.7701307697799304,
    0.9461746957575601,
    0.6690465435572892,
    0.10578554691520431,
    0.6690465435572892,
    0.47308734787878004,
    1.7701307697799304,
    0.6258357354491761,
)


def n_sh_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


@dataclass(frozen=True)
class Direction:
    """Viewing direction as polar angle theta in [0, pi], azimuth phi in [0, 2pi)."""

    theta: float
    phi: float

    @property
    def unit_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array(
            [st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)]
        )

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "Direction":
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("direction vector must be nonzero and finite")
        v = v / n
        theta = math.acos(min(1.0, max(-1.0, v[2])))
        phi = math.atan2(v[1], v[0]) % (2.0 * math.pi)
        return cls(theta, phi)


@dataclass
class SHCoeffs:
    """Per-channel SH expansion weights; values has shape [(lmax+1)^2, 3]."""

    lmax: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_sh_coeffs(self.lmax), 3):
            raise ValueError(
                f"expected values of shape ({n_sh_coeffs(self.lmax)}, 3), "
                f"got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("SH coefficients must be finite")

    @classmethod
    def zeros(cls, lmax: int) -> "SHCoeffs":
        return cls(lmax, np.zeros((n_sh_coeffs(lmax), 3)))


def _as_unit_vectors(d) -> np.ndarray:
    if isinstance(d, Direction):
        return d.unit_vector
    return np.asarray(d, dtype=float)


def eval_sh_basis(lmax: int, d) -> np.ndarray:
    """Evaluate the basis at unit direction(s) d; returns [..., (lmax+1)^2].

    d is a Direction or an array [..., 3] of unit vectors.
    """
    if not 0 <= lmax <= MAX_LMAX:
        raise ValueError(f"lmax must be in [0, {MAX_LMAX}], got {lmax}")
    v = _as_unit_vectors(d)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out = np.empty(v.shape[:-1] + (n_sh_coeffs(lmax),))
    out[..., 0] = SH_C0
    if lmax >= 1:
        out[..., 1] = SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = SH_C1 * x
    if lmax >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if lmax >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    if lmax >= 4:
        out[..., 16] = SH_C4[0] * xy * (xx - yy)
        out[..., 17] = SH_C4[1] * yz * (3.0 * xx - yy)
        out[..., 18] = SH_C4[2] * xy * (7.0 * zz - 1.0)
        out[..., 19] = SH_C4[3] * yz * (7.0 * zz - 3.0)
        out[..., 20] = SH_C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
        out[..., 21] = SH_C4[5] * xz * (7.0 * zz - 3.0)
        out[..., 22] = SH_C4[6] * (xx - yy) * (7.0 * zz - 1.0)
        out[..., 23] = SH_C4[7] * xz * (xx - 3.0 * yy)
        out[..., 24] = SH_C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to stay overflow-free for large |x|.
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray, eps: float = LOGIT_EPS) -> np.ndarray:
    """Inverse sigmoid; inputs are clamped to [eps, 1 - eps] to stay finite."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def decode_color(z, d) -> np.ndarray:
    """Sigmoid-squashed SH sum at direction(s) d; returns rgb in [0,1], shape [..., 3]."""
    if isinstance(z, SHCoeffs):
        values = z.values
        lmax = z.lmax
    else:
        values = np.asarray(z, dtype=float)
        lmax = int(math.isqrt(values.shape[0])) - 1
    basis = eval_sh_basis(lmax, d)
    return sigmoid(basis @ values)


def sh_design_matrix(dirs: np.ndarray, lmax: int) -> np.ndarray:
    """Design matrix [N, (lmax+1)^2] for unit directions [N, 3]."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    return eval_sh_basis(lmax, dirs)


def fit_sh(dirs, values: np.ndarray, lmax: int) -> SHCoeffs:
    """Ridge least-squares SH fit of per-direction logit-space colors.

    dirs: [N, 3] unit vectors (or sequence of Direction); values: [N, 3] logits.
    Requires at least (lmax+1)^2 samples with genuine directional spread.
    """
    if not 0 <= lmax <= MAX_LMAX:
        raise ValueError(f"lmax must be in [0, {MAX_LMAX}], got {lmax}")
    if not isinstance(dirs, np.ndarray):
        dirs = np.stack([_as_unit_vectors(d) for d in dirs])
    values = np.asarray(values, dtype=float)
    n_coeffs = n_sh_coeffs(lmax)
    if dirs.shape[0] < n_coeffs:
        raise ValueError(
            f"need at least {n_coeffs} samples for lmax={lmax}, got {dirs.shape[0]}"
        )
    design = sh_design_matrix(dirs, lmax)
    solve = sh_projection_solver(design)
    return SHCoeffs(lmax, solve(values))


def sh_projection_solver(design: np.ndarray):
    """Factor the ridge normal equations of a design matrix once; reuse per fit.

    Returns a callable mapping sample values [N, C] (or [..., N, C]) to
    coefficients [(lmax+1)^2, C]. Raises if the directions do not span the
    basis (rank-deficient design even after the ridge term).
    """
    gram = design.T @ design
    n_coeffs = gram.shape[0]
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] < 1e-6 * max(1.0, eigvals[-1]):
        raise ValueError("insufficient directional coverage for SH fit")
    gram = gram + RIDGE_LAMBDA * np.eye(n_coeffs)
    chol = np.linalg.cholesky(gram)

    def solve(values: np.ndarray) -> np.ndarray:
        rhs = np.einsum("nb,...nc->...bc", design, np.asarray(values, dtype=float))
        y = np.linalg.solve(chol, rhs)
        return np.linalg.solve(chol.T, y)

    return solve


def fibonacci_directions(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors on the sphere (deterministic spiral layout)."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
