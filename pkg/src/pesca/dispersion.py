"""Gaussian dispersion estimation with EM-imputed PCA and holdout rank selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, EstimationError

log = logging.getLogger(__name__)


def _as_problem(X, W):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ContractError("X must be a matrix")
    if W is None:
        W = np.isfinite(X)
    W = np.asarray(W, dtype=bool)
    if W.shape != X.shape:
        raise ContractError(f"mask shape {W.shape} != data shape {X.shape}")
    if not np.all(np.isfinite(X[W])):
        raise ContractError("observed cells must be finite")
    return np.where(W, X, 0.0), W


def observed_column_means(X, W) -> tuple:
    """Column means over observed cells and the columns that have none."""
    counts = W.sum(axis=0)
    empty = counts == 0
    means = np.where(empty, 0.0, (X * W).sum(axis=0) / np.maximum(counts, 1))
    return means, empty


def _truncated_svd(M: np.ndarray, R: int):
    """Top-``R`` left singular vectors and the rank-``R`` reconstruction.

    Works on the Gram matrix of the smaller side, which is much cheaper than a
    full SVD for the wide blocks handled here.
    """
    I, J = M.shape
    if I <= J:
        vals, vecs = np.linalg.eigh(M @ M.T)
        U = vecs[:, ::-1][:, :R]
        B = M.T @ U
        return U, B, U @ B.T
    vals, vecs = np.linalg.eigh(M.T @ M)
    V = vecs[:, ::-1][:, :R]
    A = M @ V
    return A, V, A @ V.T


def _em_pca(X, W, R, tol, max_iter, start=None):
    """EM-PCA with column offsets re-estimated from the imputed matrix.

    Returns ``(A, B, fit, iterations, converged)`` where ``fit`` is the full
    reconstruction ``1 mu^T + A B^T``; it can warm-start the next call.
    """
    complete = bool(W.all())
    fit = observed_column_means(X, W)[0][None, :] + np.zeros_like(X) if start is None else start
    A = np.zeros((X.shape[0], 0))
    B = np.zeros((X.shape[1], 0))
    for it in range(1, max_iter + 1):
        filled = X if complete else np.where(W, X, fit)
        mu = filled.mean(axis=0)
        if R > 0:
            A, B, low = _truncated_svd(filled - mu, R)
            new = mu + low
        else:
            new = np.broadcast_to(mu, X.shape).copy()
        if complete:
            return A, B, new, it, True
        diff = np.linalg.norm(new - fit)
        norm = np.linalg.norm(new)
        fit = new
        if norm == 0.0 or diff <= tol * norm:
            return A, B, fit, it, True
    log.debug("EM-PCA hit max_iter=%d at rank %d", max_iter, R)
    return A, B, fit, max_iter, False


def weighted_pca(X, W=None, R: int = 1, tol: float = 1e-8, max_iter: int = 2000, seed=None):
    """Rank-``R`` PCA of a partially observed matrix.

    Missing cells are imputed with the current reconstruction (column
    offsets plus the rank-``R`` part) and the truncated SVD is recomputed
    until the reconstruction settles.

    Returns
    -------
    scores : ndarray, shape (I, R)
    loadings : ndarray, shape (J, R)
        ``scores @ loadings.T`` is the centered reconstruction.
    """
    Xr, W = _as_problem(X, W)
    if not 0 <= R <= min(Xr.shape):
        raise ContractError(f"R={R} must lie in [0, {min(Xr.shape)}]")
    # the iteration is deterministic; seed is accepted for interface symmetry
    A, B, _, _, _ = _em_pca(Xr, W, R, tol, max_iter)
    return A, B


@dataclass
class RankCvReport:
    candidate_ranks: list
    cv_errors: np.ndarray
    chosen_rank: int
    iterations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "candidate_ranks": list(self.candidate_ranks),
            "cv_errors": [float(v) for v in self.cv_errors],
            "chosen_rank": int(self.chosen_rank),
            "iterations": list(self.iterations),
        }


def default_max_rank(shape) -> int:
    return min(min(shape) // 2, 30)


def holdout_cells(W, fraction: float = 0.1, seed=None) -> np.ndarray:
    """Boolean mask of ``round(fraction * ||W||_0)`` observed cells."""
    rng = np.random.default_rng(seed)
    cells = np.flatnonzero(W.ravel())
    k = int(round(fraction * cells.size))
    test = np.zeros(W.size, dtype=bool)
    test[rng.choice(cells, size=k, replace=False)] = True
    return test.reshape(W.shape)


def select_rank(X, W=None, R_max: int | None = None, seed=None, fraction: float = 0.1,
                tol: float = 1e-3, max_iter: int = 500, test_mask=None) -> RankCvReport:
    """Pick the PCA rank with the smallest squared error on held-out cells.

    Ranks ``0..R_max`` are fitted in order, each warm-started from the
    previous reconstruction. Ties, up to round-off relative to the rank-0
    error, go to the smallest rank.
    """
    Xr, W = _as_problem(X, W)
    if R_max is None:
        R_max = default_max_rank(Xr.shape)
    if not 0 <= R_max < min(Xr.shape):
        raise ContractError(f"R_max={R_max} must lie in [0, {min(Xr.shape) - 1}]")
    test = holdout_cells(W, fraction, seed) if test_mask is None else np.asarray(test_mask, dtype=bool)
    train = W & ~test
    target = Xr[test]
    errors = np.empty(R_max + 1)
    iters = []
    fit = None
    for R in range(R_max + 1):
        _, _, fit, it, _ = _em_pca(Xr, train, R, tol, max_iter, start=fit)
        resid = target - fit[test]
        errors[R] = float(resid @ resid)
        iters.append(it)
    # errors within round-off of the minimum count as ties
    slack = 1e-10 * max(errors[0], np.finfo(float).tiny)
    chosen = int(np.flatnonzero(errors <= errors.min() + slack)[0])
    return RankCvReport(list(range(R_max + 1)), errors, chosen, iters)


@dataclass
class DispersionEstimate:
    """Mean estimate over repeats plus the per-repeat values and ranks."""

    alpha: float
    alphas: list
    ranks: list
    reports: list = field(default_factory=list, repr=False)

    @property
    def std(self) -> float:
        return float(np.std(self.alphas))

    @property
    def degenerate(self) -> bool:
        """True when the residual variance is numerically zero."""
        return self.alpha <= 1e-10

    def __float__(self) -> float:
        return float(self.alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alphas": list(self.alphas),
            "std": self.std,
            "ranks": list(self.ranks),
            "degenerate": self.degenerate,
            "cv": [r.to_dict() for r in self.reports],
        }


def residual_dispersion(X, W, R: int, tol: float = 1e-8, max_iter: int = 2000) -> float:
    """``||W * (X - AB^T)||^2 / (||W||_0 - (I + J) R)`` at a fixed rank."""
    Xr, W = _as_problem(X, W)
    I, J = Xr.shape
    dof = int(W.sum()) - (I + J) * R
    if dof <= 0:
        raise EstimationError(f"rank {R} leaves {dof} degrees of freedom for a {I}x{J} block")
    _, _, fit, _, _ = _em_pca(Xr, W, R, tol, max_iter)
    resid = np.where(W, Xr - fit, 0.0)
    return float(np.sum(resid * resid)) / dof


def estimate_dispersion(X, W=None, repeats: int = 3, seed=None, R_max: int | None = None,
                        fraction: float = 0.1) -> DispersionEstimate:
    """Estimate the noise variance of a quantitative block.

    Each repeat draws its own holdout, selects a rank, refits on every
    observed cell at that rank and divides the residual sum of squares by
    the remaining degrees of freedom. Refits are cached by rank.
    """
    Xr, W = _as_problem(X, W)
    if repeats < 1:
        raise ContractError("repeats must be at least 1")
    seeds = np.random.SeedSequence(seed).spawn(repeats)
    cache = {}
    alphas, ranks, reports = [], [], []
    for ss in seeds:
        report = select_rank(Xr, W, R_max, seed=np.random.default_rng(ss), fraction=fraction)
        R = report.chosen_rank
        if R not in cache:
            cache[R] = residual_dispersion(Xr, W, R)
        alphas.append(cache[R])
        ranks.append(R)
        reports.append(report)
    return DispersionEstimate(float(np.mean(alphas)), alphas, ranks, reports)
