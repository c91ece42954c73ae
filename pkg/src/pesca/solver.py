"""Majorization-minimization fitting of the penalized multi-block model.

Each block ``l`` is parameterized as ``Theta_l = 1 mu_l^T + A B_l^T`` with a
shared column-centered orthonormal score matrix ``A``. One iteration

1. builds the pseudo-data ``H_l`` of the quadratic likelihood majorizer,
2. sets ``mu_l`` to the column means of ``H_l``,
3. solves an orthogonal Procrustes problem for ``A`` on the weighted,
   centered pseudo-data,
4. updates every loading column with block soft-thresholding, using
   penalty weights linearized at the previous loadings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DivergenceError
from .expfam import (
    GAUSSIAN,
    DataBlock,
    block_neg_loglik,
    curvature_bound,
    loglik_terms,
    mean_map,
    pseudo_data,
)
from .penalty import PenaltySpec, penalty_value, supergradient

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-12


@dataclass
class EscaModel:
    """Offsets, shared scores and per-block loadings."""

    offsets: list
    scores: np.ndarray
    loadings: list

    @property
    def n_blocks(self) -> int:
        return len(self.loadings)

    @property
    def R(self) -> int:
        return self.scores.shape[1]

    def theta(self, l: int) -> np.ndarray:
        return self.offsets[l][None, :] + self.scores @ self.loadings[l].T

    def thetas(self) -> list:
        return [self.theta(l) for l in range(self.n_blocks)]

    def sigma_table(self) -> np.ndarray:
        """``L x R`` table of loading column norms."""
        return np.vstack([np.linalg.norm(B, axis=0) for B in self.loadings])

    def active_groups(self, tol: float = ACTIVE_TOL) -> int:
        return int((self.sigma_table() > tol).sum())

    def n_components(self, tol: float = ACTIVE_TOL) -> int:
        return int((self.sigma_table().max(axis=0) > tol).sum())

    def copy(self) -> "EscaModel":
        return EscaModel(
            [m.copy() for m in self.offsets],
            self.scores.copy(),
            [B.copy() for B in self.loadings],
        )

    def constraint_violation(self) -> tuple:
        """``(||A^T A - I||_F, ||1^T A||_inf)``."""
        A = self.scores
        ortho = np.linalg.norm(A.T @ A - np.eye(A.shape[1]))
        center = np.abs(A.sum(axis=0)).max() if A.size else 0.0
        return float(ortho), float(center)


@dataclass
class FitConfig:
    epsilon_f: float = 1e-6
    max_iter: int = 500
    R_init: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon_f > 0:
            raise ContractError("epsilon_f must be positive")
        if self.max_iter < 1:
            raise ContractError("max_iter must be at least 1")
        if self.R_init < 1:
            raise ContractError("R_init must be at least 1")


@dataclass
class FitResult:
    model: EscaModel
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    sigma_table: np.ndarray
    rank_deficient_steps: int = 0
    pseudo_data: list = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _check_blocks(blocks):
    if not blocks:
        raise ContractError("at least one block is required")
    n_rows = {b.n_rows for b in blocks}
    if len(n_rows) != 1:
        raise ContractError(f"blocks must share the row count, got {sorted(n_rows)}")
    for l, b in enumerate(blocks):
        if b.n_observed == 0:
            raise ContractError(f"block {l} has no observed cells")


def _lambdas(penalty: PenaltySpec, n_blocks: int) -> np.ndarray:
    lam = np.asarray(penalty.lambdas, dtype=float)
    if lam.size == 1 and n_blocks > 1:
        lam = np.repeat(lam, n_blocks)
    if lam.size != n_blocks:
        raise ContractError(f"need {n_blocks} lambdas, got {lam.size}")
    return lam


def _householder_center(M: np.ndarray) -> np.ndarray:
    """Apply the Householder reflector mapping e_1 to 1/sqrt(I).

    Its columns 2..I form an orthonormal basis of the centered subspace.
    """
    n = M.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] -= 1.0
    vv = v @ v
    if vv == 0.0:
        return M.copy()
    return M - np.outer(v, (2.0 / vv) * (v @ M))


def centered_orthonormalize(M: np.ndarray, rng=None) -> np.ndarray:
    """Closest column-centered orthonormal matrix to ``M`` (polar factor).

    Directions that vanish after centering are filled with random
    centered orthonormal complements.
    """
    n, r = M.shape
    if r > n - 1:
        raise ContractError(f"at most {n - 1} centered orthonormal columns exist, asked {r}")
    Q = _householder_center(M)[1:]
    U, s, Vt = np.linalg.svd(Q, full_matrices=False)
    tiny = s <= max(s.max(initial=0.0), 1.0) * 1e-12
    if tiny.any():
        rng = np.random.default_rng(rng)
        good = U[:, ~tiny]
        fill = rng.standard_normal((n - 1, int(tiny.sum())))
        fill -= good @ (good.T @ fill)
        fill, _ = np.linalg.qr(fill)
        U = np.hstack([good, fill])
        Vt = np.vstack([Vt[~tiny], Vt[tiny]])
    P = np.vstack([np.zeros((1, r)), U @ Vt])
    return _householder_center(P)


def update_offsets(H_list) -> list:
    return [H.mean(axis=0) for H in H_list]


def update_scores(JH_weighted, B_weighted, return_info: bool = False):
    """Orthogonal Procrustes step for the shared scores.

    Maximizes ``tr(A^T JH B)`` over column-centered orthonormal ``A`` via the
    SVD of ``JH B`` expressed in an orthonormal basis of the centered
    subspace. When ``JH B`` is rank deficient the thin-SVD factors are still
    used; ``return_info=True`` additionally reports that case.
    """
    JH = np.asarray(JH_weighted, dtype=float)
    Bw = np.asarray(B_weighted, dtype=float)
    M = JH @ Bw
    n, r = M.shape
    if r > n - 1:
        raise ContractError(f"R={r} exceeds I-1={n - 1}")
    Q = _householder_center(M)[1:]
    U, s, Vt = np.linalg.svd(Q, full_matrices=False)
    P = np.vstack([np.zeros((1, r)), U @ Vt])
    A = _householder_center(P)
    if return_info:
        deficient = bool(s.size and s.min() <= max(s.max(), 1.0) * 1e-12)
        return A, deficient
    return A


def update_loadings(JH_l, A, spec: PenaltySpec, lam: float, weight: float,
                    sigma_prev, rho: float, alpha: float) -> np.ndarray:
    """Proximal update of every loading column of one block.

    The threshold for column ``r`` is ``lam * weight * omega_r * alpha / rho``
    with ``omega_r`` the penalty supergradient at the previous column norm.
    An infinite threshold zeroes the column.
    """
    P = JH_l.T @ A
    if lam == 0.0:
        return P
    omega = np.atleast_1d(supergradient(spec, np.asarray(sigma_prev, dtype=float)))
    thresholds = lam * weight * omega * alpha / rho
    norms = np.linalg.norm(P, axis=0)
    keep = norms > thresholds
    shrink = np.zeros_like(norms)
    shrink[keep] = 1.0 - thresholds[keep] / norms[keep]
    return P * shrink[None, :]


def penalty_term(model: EscaModel, blocks, penalty: PenaltySpec) -> float:
    lam = _lambdas(penalty, len(blocks))
    w = penalty.block_weights([b.n_cols for b in blocks])
    total = 0.0
    for l, B in enumerate(model.loadings):
        if lam[l] == 0.0:
            continue
        total += lam[l] * w[l] * float(np.sum(penalty_value(penalty, np.linalg.norm(B, axis=0))))
    return total


def objective(model: EscaModel, blocks, penalty: PenaltySpec) -> float:
    """Penalized negative log-likelihood (likelihood constants dropped)."""
    nll = sum(block_neg_loglik(b, model.theta(l)) for l, b in enumerate(blocks))
    return float(nll + penalty_term(model, blocks, penalty))


def _evaluate(model: EscaModel, blocks, penalty: PenaltySpec):
    """Objective together with the thetas and residuals the next step reuses."""
    thetas, resids, nll = [], [], 0.0
    for l, b in enumerate(blocks):
        t = model.theta(l)
        v, r = loglik_terms(b, t)
        thetas.append(t)
        resids.append(r)
        nll += v
    return float(nll + penalty_term(model, blocks, penalty)), thetas, resids


def surrogate(model: EscaModel, anchor: EscaModel, blocks, penalty: PenaltySpec) -> float:
    """Value at ``model`` of the majorizer built at ``anchor``.

    Includes every constant, so it equals ``objective(anchor)`` at
    ``model == anchor`` and upper-bounds ``objective(model)``.
    """
    lam = _lambdas(penalty, len(blocks))
    w = penalty.block_weights([b.n_cols for b in blocks])
    total = 0.0
    for l, b in enumerate(blocks):
        tk = anchor.theta(l)
        t = model.theta(l)
        rho = curvature_bound(b.dist, tk, b.mask)
        grad = np.where(b.mask, mean_map(b.dist, tk) - b.values, 0.0)
        d = t - tk
        total += block_neg_loglik(b, tk)
        total += (np.sum(grad * d) + 0.5 * rho * np.sum(d * d)) / b.dist.alpha
        if lam[l] == 0.0:
            continue
        s_k = np.linalg.norm(anchor.loadings[l], axis=0)
        s = np.linalg.norm(model.loadings[l], axis=0)
        omega = np.atleast_1d(supergradient(penalty, s_k))
        step = np.where(s == s_k, 0.0, omega * (s - s_k))
        total += lam[l] * w[l] * float(np.sum(penalty_value(penalty, s_k) + step))
    return float(total)


def _start_pseudo_data(block: DataBlock) -> np.ndarray:
    if block.dist.family == GAUSSIAN:
        return block.values.astype(float)
    zero = np.zeros(block.shape)
    return pseudo_data(block, zero, curvature_bound(block.dist, zero, block.mask))


def initialize(blocks, R: int, seed=0) -> EscaModel:
    """Classical SCA start on weighted, centered, zero-imputed data.

    Non-Gaussian blocks enter through their pseudo-data at ``Theta = 0``.
    """
    _check_blocks(blocks)
    n = blocks[0].n_rows
    total_cols = sum(b.n_cols for b in blocks)
    if R < 1 or R > min(n - 1, total_cols):
        raise ContractError(f"R={R} must lie in [1, min(I-1, sum J)] = [1, {min(n - 1, total_cols)}]")
    offsets, centered = [], []
    for b in blocks:
        X = _start_pseudo_data(b)
        W = b.mask
        counts = W.sum(axis=0)
        mu = np.where(counts > 0, (X * W).sum(axis=0) / np.maximum(counts, 1), 0.0)
        offsets.append(mu)
        centered.append(np.where(W, X - mu, 0.0))
    Z = np.hstack([C / np.sqrt(b.dist.alpha) for C, b in zip(centered, blocks)])
    U, _, _ = np.linalg.svd(Z, full_matrices=False)
    A = centered_orthonormalize(U[:, :R], rng=seed)
    loadings = [C.T @ A for C in centered]
    return EscaModel(offsets, A, loadings)


def fit(blocks, penalty: PenaltySpec, config: FitConfig | None = None,
        init: EscaModel | None = None) -> FitResult:
    """Run the MM iterations until the relative objective change drops below
    ``config.epsilon_f`` or ``config.max_iter`` is reached."""
    config = config or FitConfig()
    _check_blocks(blocks)
    L = len(blocks)
    n = blocks[0].n_rows
    lam = _lambdas(penalty, L)
    weights = penalty.block_weights([b.n_cols for b in blocks])
    alphas = np.array([b.dist.alpha for b in blocks])

    if init is None:
        R = min(config.R_init, n - 1, sum(b.n_cols for b in blocks))
        model = initialize(blocks, R, seed=config.seed)
    else:
        model = init.copy()
        if len(model.loadings) != L:
            raise ContractError("initial model block count does not match the data")
        for B, b in zip(model.loadings, blocks):
            if B.shape[0] != b.n_cols:
                raise ContractError("initial loadings do not match block widths")

    f_prev, thetas, resids = _evaluate(model, blocks, penalty)
    if not np.isfinite(f_prev):
        raise DivergenceError("initial objective is not finite", iteration=0, trace=[f_prev])
    trace = [f_prev]
    converged = False
    deficient_steps = 0
    H_list = None
    it = 0
    for it in range(1, config.max_iter + 1):
        H_list, rhos = [], np.empty(L)
        for l, b in enumerate(blocks):
            rhos[l] = curvature_bound(b.dist, thetas[l], b.mask)
            H_list.append(pseudo_data(b, thetas[l], rhos[l], resids[l]))
        offsets = update_offsets(H_list)
        JH = [H - mu for H, mu in zip(H_list, offsets)]
        d = np.sqrt(rhos / alphas)
        JH_w = np.hstack([d[l] * JH[l] for l in range(L)])
        B_w = np.vstack([d[l] * model.loadings[l] for l in range(L)])
        A, deficient = update_scores(JH_w, B_w, return_info=True)
        deficient_steps += deficient
        sigma_prev = model.sigma_table()
        loadings = [
            update_loadings(JH[l], A, penalty, lam[l], weights[l], sigma_prev[l], rhos[l], alphas[l])
            for l in range(L)
        ]
        model = EscaModel(offsets, A, loadings)
        f, thetas, resids = _evaluate(model, blocks, penalty)
        trace.append(f)
        if not np.isfinite(f):
            raise DivergenceError(f"objective became non-finite at iteration {it}", iteration=it, trace=trace)
        if f_prev == 0.0:
            converged = True
            break
        if (f_prev - f) / abs(f_prev) < config.epsilon_f:
            converged = True
            break
        f_prev = f
    log.debug("fit stopped after %d iterations (converged=%s, f=%.6g)", it, converged, trace[-1])
    return FitResult(
        model=model,
        objective_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        sigma_table=model.sigma_table(),
        rank_deficient_steps=deficient_steps,
    )


@dataclass
class VariationExplained:
    """Variation explained ratios; ``nan`` marks an undefined ratio."""

    per_component: np.ndarray  # L x R
    per_block: np.ndarray  # L
    combined_per_component: np.ndarray  # R
    combined_total: float


def _ratio(resid: float, denom: float) -> float:
    return 1.0 - resid / denom if denom > 0 else float("nan")


def working_data(model: EscaModel, blocks) -> list:
    """Observed data for Gaussian blocks, converged pseudo-data otherwise."""
    out = []
    for l, b in enumerate(blocks):
        if b.dist.family == GAUSSIAN:
            out.append(b.values)
        else:
            t = model.theta(l)
            out.append(pseudo_data(b, t, curvature_bound(b.dist, t, b.mask)))
    return out


def variation_explained(model: EscaModel, blocks) -> VariationExplained:
    L, R = model.n_blocks, model.R
    data = working_data(model, blocks)
    per_comp = np.empty((L, R))
    per_block = np.empty(L)
    comb_num_comp = np.zeros(R)
    comb_num_total = 0.0
    comb_den = 0.0
    for l, b in enumerate(blocks):
        W = b.mask
        E0 = np.where(W, data[l] - model.offsets[l][None, :], 0.0)
        den = float(np.sum(E0 * E0))
        fitted = model.scores @ model.loadings[l].T
        res = np.where(W, E0 - fitted, 0.0)
        rss = float(np.sum(res * res))
        per_block[l] = _ratio(rss, den)
        scale = 1.0 / b.dist.alpha
        comb_den += scale * den
        comb_num_total += scale * rss
        for r in range(R):
            comp = np.outer(model.scores[:, r], model.loadings[l][:, r])
            res_r = np.where(W, E0 - comp, 0.0)
            rss_r = float(np.sum(res_r * res_r))
            per_comp[l, r] = _ratio(rss_r, den)
            comb_num_comp[r] += scale * rss_r
    combined = np.array([_ratio(v, comb_den) for v in comb_num_comp])
    return VariationExplained(per_comp, per_block, combined, _ratio(comb_num_total, comb_den))


def sca_oracle(blocks, R: int) -> list:
    """Direct weighted SCA via one SVD of the centered complete data.

    Returns the fitted ``Theta_l`` per block. Intended as an independent check
    of the unpenalized Gaussian fit.
    """
    cols = [b.values - b.values.mean(axis=0) for b in blocks]
    scales = [1.0 / np.sqrt(b.dist.alpha) for b in blocks]
    Z = np.hstack([s * C for s, C in zip(scales, cols)])
    U, sv, Vt = np.linalg.svd(Z, full_matrices=False)
    approx = (U[:, :R] * sv[:R]) @ Vt[:R]
    out, start = [], 0
    for b, s in zip(blocks, scales):
        out.append(b.values.mean(axis=0) + approx[:, start:start + b.n_cols] / s)
        start += b.n_cols
    return out


def with_dispersions(blocks, alphas) -> list:
    return [b.with_dist(b.dist.with_alpha(a)) if b.dist.family == GAUSSIAN else b
            for b, a in zip(blocks, alphas)]


__all__ = [
    "EscaModel", "FitConfig", "FitResult", "VariationExplained", "initialize",
    "objective", "surrogate", "update_offsets", "update_scores", "update_loadings",
    "fit", "variation_explained", "centered_orthonormalize", "sca_oracle",
    "working_data", "with_dispersions",
]
