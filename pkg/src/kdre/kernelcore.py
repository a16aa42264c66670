"""Gaussian kernels, Gram blocks and dense symmetric linear algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist, pdist

# eig_min at or below this fraction of eig_max counts as singular
SINGULAR_RTOL = 1e-14


class InputError(ValueError):
    """Malformed numerical input (shape, finiteness, dimension)."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Cholesky factorization broke down.

    ``pivot`` is the 1-based order of the leading minor that is not
    positive definite, as reported by LAPACK.
    """

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (leading minor of order {pivot})")
        self.pivot = pivot


class DegenerateBandwidthError(ValueError):
    """All pairwise distances vanish, so no bandwidth can be inferred."""


def as_point_set(points, name: str = "points") -> np.ndarray:
    """Validate a batch of sample vectors and return it as an (count, d) float array.

    A 1-d input is read as ``count`` points in one dimension.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-d array of shape (count, d), got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"{name} must contain at least one point of dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class KernelSpec:
    sigma: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise InputError(f"unsupported kernel kind {self.kind!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InputError(f"sigma must be a positive finite real, got {self.sigma!r}")

    def matrix(self, a, b) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and the rows of ``b``."""
        a = as_point_set(a, "a")
        b = as_point_set(b, "b")
        if a.shape[1] != b.shape[1]:
            raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        sq = cdist(a, b, "sqeuclidean")
        return np.exp(-sq / (2.0 * self.sigma**2))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.size} vs {y.size}")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * spec.sigma**2)))


@dataclass(frozen=True)
class GramBlocks:
    """Sub-matrices of the joint Gram matrix of a paired sample.

    ``k21`` is never stored; use ``k12.T``.
    """

    k11: np.ndarray
    k12: np.ndarray
    k22: np.ndarray

    def __post_init__(self):
        n, m = self.k12.shape
        if self.k11.shape != (n, n) or self.k22.shape != (m, m):
            raise InputError(
                f"inconsistent block shapes k11={self.k11.shape}, k12={self.k12.shape}, "
                f"k22={self.k22.shape}"
            )

    @property
    def n(self) -> int:
        return self.k12.shape[0]

    @property
    def m(self) -> int:
        return self.k12.shape[1]


def gram_blocks(spec: KernelSpec, x, y) -> GramBlocks:
    x = as_point_set(x, "x")
    y = as_point_set(y, "y")
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: x has d={x.shape[1]}, y has d={y.shape[1]}")
    k11 = spec.matrix(x, x)
    k22 = spec.matrix(y, y)
    # exact symmetry and unit diagonal regardless of cdist rounding
    k11 = np.triu(k11) + np.triu(k11, 1).T
    k22 = np.triu(k22) + np.triu(k22, 1).T
    np.fill_diagonal(k11, 1.0)
    np.fill_diagonal(k22, 1.0)
    return GramBlocks(k11=k11, k12=spec.matrix(x, y), k22=k22)


@dataclass(frozen=True)
class SpectralSummary:
    eig_min: float
    eig_max: float
    cond: float


def _check_square(a, name="a") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


def condition_from_extremes(eig_min: float, eig_max: float) -> float:
    if eig_max <= 0 or eig_min <= SINGULAR_RTOL * eig_max:
        return float("inf")
    return eig_max / eig_min


def spectral_summary(a) -> SpectralSummary:
    """Extreme eigenvalues and condition number of a symmetric matrix.

    The input is symmetrized as (A + A^T)/2 first. ``cond`` is +inf when the
    smallest eigenvalue is not safely positive; no jitter is ever added.
    """
    a = _check_square(a)
    eigs = np.linalg.eigvalsh(0.5 * (a + a.T))
    lo, hi = float(eigs[0]), float(eigs[-1])
    return SpectralSummary(eig_min=lo, eig_max=hi, cond=condition_from_extremes(lo, hi))


def cond(a) -> float:
    return spectral_summary(a).cond


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor; raises SingularMatrixError with the failing pivot."""
    a = _check_square(a)
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise SingularMatrixError(int(info))
    if info < 0:
        raise InputError(f"illegal argument {-info} passed to dpotrf")
    return c


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky."""
    c = cholesky(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != c.shape[0]:
        raise InputError(f"right-hand side has {b.shape[0]} rows, matrix has {c.shape[0]}")
    x, info = lapack.dpotrs(c, b, lower=1)
    if info != 0:
        raise InputError(f"dpotrs failed with info={info}")
    return x


def inv_spd(a) -> np.ndarray:
    """Explicit inverse of an SPD matrix via its Cholesky factor."""
    c = cholesky(a)
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise SingularMatrixError(int(info))
    # dpotri fills only the lower triangle
    return np.tril(inv) + np.tril(inv, -1).T


def median_heuristic(x) -> float:
    """Median of all pairwise Euclidean distances between the points."""
    x = as_point_set(x, "x")
    if x.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    med = float(np.median(pdist(x)))
    if med <= 0.0:
        raise DegenerateBandwidthError("median pairwise distance is zero")
    return med
