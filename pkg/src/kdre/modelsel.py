"""Leave-one-out cross-validation for KuLSIF and (sigma, lambda) grid search.

Samples X_l and Y_l are removed in pairs for l = 1..min(n, m).  The
closed-form route reuses one n x n inverse for every held-out pair; the naive
route refits from scratch and serves as its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import kulsif_fit_direct
from .kernelcore import GramBlocks, InputError, KernelSpec, as_point_set, gram_blocks, inv_spd


@dataclass(frozen=True)
class LoocvBreakdown:
    score: float
    w_x_plus: np.ndarray
    w_y_plus: np.ndarray
    w_x_raw: np.ndarray
    w_y_raw: np.ndarray


def _loocv_score(wx_plus: np.ndarray, wy_plus: np.ndarray) -> float:
    return float((0.5 * wx_plus @ wx_plus - wy_plus.sum()) / wx_plus.size)


def loocv_analytic(g: GramBlocks, lam: float) -> LoocvBreakdown:
    lam = float(lam)
    if not lam > 0:
        raise InputError("lambda must be positive")
    n, m = g.n, g.m
    ell = min(n, m)
    if ell < 2:
        raise InputError("LOOCV needs min(n, m) >= 2")
    c = 1.0 / ((m - 1) * lam)

    gmat = inv_spd(g.k11 + (n - 1) * lam * np.eye(n))
    e = np.ones((m, ell))
    e[np.arange(ell), np.arange(ell)] = 0.0
    s = -c * (g.k12 @ e)
    gs = gmat @ s
    # only the leading ell x ell diagonal of T is defined; rows beyond ell stay zero
    t = np.zeros((n, ell))
    idx = np.arange(ell)
    t[idx, idx] = gs[idx, idx] / gmat[idx, idx]
    a = gs - gmat @ t
    b = c * e

    coef = np.vstack([a, b]).T  # (ell, n + m): row l holds (alpha^(l), beta^(l))
    k_x = np.hstack([g.k11[:ell], g.k12[:ell]])
    k_y = np.hstack([g.k12[:, :ell].T, g.k22[:ell]])
    wx = (k_x * coef).sum(axis=1)
    wy = (k_y * coef).sum(axis=1)
    wx_plus = np.maximum(wx, 0.0)
    wy_plus = np.maximum(wy, 0.0)
    return LoocvBreakdown(_loocv_score(wx_plus, wy_plus), wx_plus, wy_plus, wx, wy)


def loocv_naive(x, y, kernel: KernelSpec, lam: float) -> LoocvBreakdown:
    """Refit KuLSIF without (X_l, Y_l) for each l and score the held-out pair."""
    x = as_point_set(x, "x")
    y = as_point_set(y, "y")
    n, m = x.shape[0], y.shape[0]
    ell = min(n, m)
    if ell < 2:
        raise InputError("LOOCV needs min(n, m) >= 2")
    wx = np.empty(ell)
    wy = np.empty(ell)
    for i in range(ell):
        xs = np.delete(x, i, axis=0)
        ys = np.delete(y, i, axis=0)
        alpha, beta = kulsif_fit_direct(gram_blocks(kernel, xs, ys), lam)
        held = np.vstack([x[i], y[i]])
        w = kernel.matrix(held, xs) @ alpha + kernel.matrix(held, ys) @ beta
        wx[i], wy[i] = w
    wx_plus = np.maximum(wx, 0.0)
    wy_plus = np.maximum(wy, 0.0)
    return LoocvBreakdown(_loocv_score(wx_plus, wy_plus), wx_plus, wy_plus, wx, wy)


@dataclass(frozen=True)
class GridSelection:
    sigma_grid: list[float]
    lambda_grid: list[float]
    scores: np.ndarray  # shape (len(sigma_grid), len(lambda_grid))
    best: tuple[float, float]
    errors: dict


def grid_select(x, y, sigma_grid, lambda_grid) -> GridSelection:
    """Score every (sigma, lambda) cell by analytic LOOCV and pick the minimum.

    Cells that fail score +inf.  Ties go to the larger lambda, then the
    larger sigma.
    """
    sigma_grid = [float(s) for s in sigma_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not sigma_grid or not lambda_grid:
        raise InputError("sigma_grid and lambda_grid must be non-empty")
    x = as_point_set(x, "x")
    y = as_point_set(y, "y")
    scores = np.full((len(sigma_grid), len(lambda_grid)), math.inf)
    errors = {}
    for i, sigma in enumerate(sigma_grid):
        try:
            g = gram_blocks(KernelSpec(sigma), x, y)
        except (InputError, np.linalg.LinAlgError) as exc:
            for j, lam in enumerate(lambda_grid):
                errors[(sigma, lam)] = str(exc)
            continue
        for j, lam in enumerate(lambda_grid):
            try:
                score = loocv_analytic(g, lam).score
            except (InputError, np.linalg.LinAlgError, FloatingPointError) as exc:
                errors[(sigma, lam)] = str(exc)
                continue
            if math.isfinite(score):
                scores[i, j] = score
    if not np.isfinite(scores).any():
        raise InputError("every grid cell failed")
    best_val = scores.min()
    cells = [(lambda_grid[j], sigma_grid[i]) for i, j in zip(*np.nonzero(scores == best_val))]
    lam_best, sigma_best = max(cells)
    return GridSelection(sigma_grid, lambda_grid, scores, (sigma_best, lam_best), errors)
