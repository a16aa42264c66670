"""Density-ratio losses in the representer parameterization.

Every estimator here shares the form

    w(z) = sum_i alpha_i k(z, X_i) + 1/(m lam) sum_j k(z, Y_j),

so the free parameters are the n coefficients ``alpha``.  The objectives
differ only in how the loss is written, which changes their Hessians (and so
the conditioning of iterative solvers) but, for the squared loss, not the
minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernelcore import GramBlocks, InputError, KernelSpec, as_point_set, gram_blocks, solve_spd


class DomainError(ValueError):
    """An iterate puts ``w`` outside the domain of the conjugate function psi."""

    def __init__(self, message: str, index: int | None = None, where: str = "x"):
        super().__init__(message)
        self.index = index
        self.where = where


@dataclass(frozen=True)
class PsiSpec:
    """A convex conjugate psi with its first two derivatives.

    ``domain_upper`` is the supremum of the domain; ``upper_open`` marks it as
    excluded (KL needs z < 0).  ``psi_prime_inv`` maps a density-ratio value
    r to the w with psi'(w) = r, when known in closed form.
    """

    kind: str
    psi: Callable[[np.ndarray], np.ndarray]
    psi_prime: Callable[[np.ndarray], np.ndarray]
    psi_double_prime: Callable[[np.ndarray], np.ndarray]
    domain_upper: float = math.inf
    upper_open: bool = True
    psi_prime_inv: Callable[[np.ndarray], np.ndarray] | None = None

    def in_domain(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.domain_upper == math.inf:
            return np.isfinite(z)
        if self.upper_open:
            return z < self.domain_upper
        return z <= self.domain_upper


def _sq(z):
    return 0.5 * np.square(z)


def _sq_prime(z):
    return np.asarray(z, dtype=np.float64)


def _sq_second(z):
    return np.ones_like(np.asarray(z, dtype=np.float64))


def _kl(z):
    return -1.0 - np.log(-np.asarray(z, dtype=np.float64))


def _kl_prime(z):
    return -1.0 / np.asarray(z, dtype=np.float64)


def _kl_second(z):
    return 1.0 / np.square(np.asarray(z, dtype=np.float64))


SQUARED = PsiSpec("squared", _sq, _sq_prime, _sq_second, psi_prime_inv=_sq_prime)
KULLBACK_LEIBLER = PsiSpec(
    "kullback_leibler", _kl, _kl_prime, _kl_second, domain_upper=0.0, psi_prime_inv=_kl_prime
)


def psi_custom(
    psi, psi_prime, psi_double_prime, domain_upper=math.inf, upper_open=True, psi_prime_inv=None
) -> PsiSpec:
    return PsiSpec("custom", psi, psi_prime, psi_double_prime, domain_upper, upper_open, psi_prime_inv)


@dataclass(frozen=True)
class ObjectiveHandle:
    """A smooth objective over the coefficient vector ``alpha``.

    ``hessian`` is set only when the Hessian is constant in ``alpha``.
    """

    kind: str
    dim: int
    value_at: Callable[[np.ndarray], float]
    grad_at: Callable[[np.ndarray], np.ndarray]
    hessian: np.ndarray | None = None


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (math.isfinite(lam) and lam > 0):
        raise InputError(f"lambda must be a positive finite real, got {lam!r}")
    return lam


def _check_alpha(alpha, n: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (n,):
        raise InputError(f"alpha must have shape ({n},), got {alpha.shape}")
    return alpha


def beta_coefficients(m: int, lam: float) -> np.ndarray:
    return np.full(m, 1.0 / (m * lam))


def kulsif_fit_direct(g: GramBlocks, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form KuLSIF coefficients ``(alpha, beta)``.

    alpha = -1/(m lam) (K11 + n lam I)^{-1} K12 1,  beta = 1/(m lam) 1.
    """
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    rhs = g.k12.sum(axis=1)
    alpha = -solve_spd(g.k11 + n * lam * np.eye(n), rhs) / (m * lam)
    return alpha, beta_coefficients(m, lam)


def rkulsif_objective(g: GramBlocks, lam: float) -> ObjectiveHandle:
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    hess = g.k11 / n + lam * np.eye(n)
    lin = g.k12.sum(axis=1) / (n * m * lam)

    def value_at(alpha):
        alpha = _check_alpha(alpha, n)
        return float(0.5 * alpha @ hess @ alpha + lin @ alpha)

    def grad_at(alpha):
        alpha = _check_alpha(alpha, n)
        return hess @ alpha + lin

    return ObjectiveHandle("rkulsif", n, value_at, grad_at, hess)


def kulsif_objective(g: GramBlocks, lam: float) -> ObjectiveHandle:
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    k11 = g.k11
    lin = k11 @ g.k12.sum(axis=1) / (n * m * lam)

    def hvp(alpha):
        k_alpha = k11 @ alpha
        return k11 @ k_alpha / n + lam * k_alpha

    def value_at(alpha):
        alpha = _check_alpha(alpha, n)
        return float(0.5 * alpha @ hvp(alpha) + lin @ alpha)

    def grad_at(alpha):
        alpha = _check_alpha(alpha, n)
        return hvp(alpha) + lin

    hess = k11 @ k11 / n + lam * k11
    return ObjectiveHandle("kulsif", n, value_at, grad_at, 0.5 * (hess + hess.T))


def kmm_inductive_objective(g: GramBlocks, lam: float) -> ObjectiveHandle:
    """Half the squared RKHS norm of the regularized KuLSIF derivative.

    With u = (K11/n + lam I) alpha + K12 1/(n m lam) (the R-KuLSIF gradient),
    the value is u^T K11 u / 2 and the gradient (K11/n + lam I) K11 u.
    """
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    k11 = g.k11
    lin = g.k12.sum(axis=1) / (n * m * lam)

    def residual(alpha):
        return k11 @ alpha / n + lam * alpha + lin

    def value_at(alpha):
        u = residual(_check_alpha(alpha, n))
        return float(0.5 * u @ (k11 @ u))

    def grad_at(alpha):
        k_u = k11 @ residual(_check_alpha(alpha, n))
        return k11 @ k_u / n + lam * k_u

    k2 = k11 @ k11
    hess = k2 @ k11 / n**2 + 2.0 * lam * k2 / n + lam**2 * k11
    return ObjectiveHandle("kmm_inductive", n, value_at, grad_at, 0.5 * (hess + hess.T))


def mest_objective(g: GramBlocks, lam: float, psi: PsiSpec) -> ObjectiveHandle:
    """Regularized psi-divergence M-estimation loss.

    value = mean_i psi(w(X_i)) - mean_j w(Y_j) + lam/2 ||w||_H^2, including
    the alpha-independent part of the RKHS norm.  psi is only ever evaluated at
    the X points, so DomainError is raised when some w(X_i) leaves its domain;
    w(Y_j) is unconstrained.
    """
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    k11, k12 = g.k11, g.k12
    c = 1.0 / (m * lam)
    offset_x = c * k12.sum(axis=1)
    offset_y = c * g.k22.sum(axis=1)
    const_norm = c * c * g.k22.sum()

    def fitted(alpha):
        alpha = _check_alpha(alpha, n)
        k_alpha = k11 @ alpha
        wx = k_alpha + offset_x
        wy = k12.T @ alpha + offset_y
        bad = np.flatnonzero(~psi.in_domain(wx))
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"w(X_{i}) = {wx[i]:.6g} is outside the domain of psi ({psi.kind})", index=i, where="x"
            )
        return alpha, k_alpha, wx, wy

    def value_at(alpha):
        alpha, k_alpha, wx, wy = fitted(alpha)
        norm_sq = alpha @ k_alpha + 2.0 * c * (alpha @ k12.sum(axis=1)) + const_norm
        return float(np.mean(psi.psi(wx)) - np.mean(wy) + 0.5 * lam * norm_sq)

    def grad_at(alpha):
        alpha, k_alpha, wx, _ = fitted(alpha)
        # the -mean w(Y) and cross-norm terms cancel exactly
        return k11 @ psi.psi_prime(wx) / n + lam * k_alpha

    hess = None
    if psi.kind == "squared":
        h = k11 @ k11 / n + lam * k11
        hess = 0.5 * (h + h.T)
    return ObjectiveHandle(f"mest({psi.kind})", n, value_at, grad_at, hess)


def kl_feasible_start(g: GramBlocks, lam: float, delta: float = 0.1, max_doublings: int = 8) -> np.ndarray:
    """A coefficient vector with w(X_i) = -delta < 0 for every i.

    delta is doubled until every w(Y_j) is negative as well.  The objective
    only needs w(X) in the domain, so when no doubling makes w(Y) negative the
    start for the initial delta is returned.
    """
    lam = _check_lambda(lam)
    n, m = g.n, g.m
    offset_x = g.k12.sum(axis=1) / (m * lam)
    offset_y = g.k22.sum(axis=1) / (m * lam)
    first = None
    for _ in range(max_doublings + 1):
        alpha = -solve_spd(g.k11, offset_x + delta * np.ones(n))
        if first is None:
            first = alpha
        wy = g.k12.T @ alpha + offset_y
        if np.all(wy < 0):
            return alpha
        delta *= 2.0
    return first


@dataclass(frozen=True)
class RatioModel:
    alpha: np.ndarray
    beta: np.ndarray
    lam: float
    kernel: KernelSpec
    x_train: np.ndarray
    y_train: np.ndarray

    def __post_init__(self):
        if self.alpha.shape != (self.x_train.shape[0],) or self.beta.shape != (self.y_train.shape[0],):
            raise InputError("coefficient lengths do not match the training samples")

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    def predict_many(self, z) -> np.ndarray:
        z = as_point_set(z, "z")
        if z.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: model has d={self.dim}, got {z.shape[1]}")
        return self.kernel.matrix(z, self.x_train) @ self.alpha + self.kernel.matrix(z, self.y_train) @ self.beta

    def predict(self, z) -> float:
        z = np.asarray(z, dtype=np.float64).ravel()
        return float(self.predict_many(z[None, :])[0])

    def predict_truncated(self, z) -> float:
        return max(self.predict(z), 0.0)


def fit_kulsif(x, y, kernel: KernelSpec, lam: float) -> RatioModel:
    x = as_point_set(x, "x")
    y = as_point_set(y, "y")
    alpha, beta = kulsif_fit_direct(gram_blocks(kernel, x, y), lam)
    return RatioModel(alpha=alpha, beta=beta, lam=float(lam), kernel=kernel, x_train=x, y_train=y)


def empirical_l2_error(model: RatioModel, reference_ratio, eval_points) -> float:
    """Root-mean-square gap between the truncated model and a reference ratio."""
    pts = as_point_set(eval_points, "eval_points")
    pred = np.maximum(model.predict_many(pts), 0.0)
    ref = np.array([reference_ratio(p) for p in pts], dtype=np.float64)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))
