"""Exponential-family kernel for the three supported data types.

Every block is modelled through its natural parameter matrix ``theta`` and a
log-partition function ``b``:

=========  ==================  ===============  =========
family     b(theta)            b'(theta)        b''
=========  ==================  ===============  =========
gaussian   theta**2 / 2        theta            1
bernoulli  log(1 + e**theta)   logistic(theta)  <= 1/4
poisson    e**theta            e**theta         e**theta
=========  ==================  ===============  =========

The likelihood constant that does not depend on ``theta`` is dropped
everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import ContractError, InvalidStateError

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
POISSON = "poisson"
FAMILIES = (GAUSSIAN, BERNOULLI, POISSON)


@dataclass(frozen=True)
class Distribution:
    """A family tag plus its dispersion.

    Only Gaussian blocks carry a free dispersion (the noise variance); the
    Bernoulli and Poisson dispersions are fixed at one.
    """

    family: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown family {self.family!r}")
        alpha = float(self.alpha)
        if self.family == GAUSSIAN:
            if not (alpha > 0 and np.isfinite(alpha)):
                raise ContractError(f"gaussian dispersion must be positive, got {alpha}")
        elif alpha != 1.0:
            raise ContractError(f"{self.family} dispersion is fixed at 1, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def gaussian(cls, alpha: float = 1.0) -> "Distribution":
        return cls(GAUSSIAN, alpha)

    @classmethod
    def bernoulli(cls) -> "Distribution":
        return cls(BERNOULLI)

    @classmethod
    def poisson(cls) -> "Distribution":
        return cls(POISSON)

    @property
    def dispersion(self) -> float:
        return self.alpha

    def with_alpha(self, alpha: float) -> "Distribution":
        return Distribution(self.family, alpha)


@dataclass(frozen=True)
class DataBlock:
    """One observed ``I x J`` matrix with its missing-value mask.

    Cells with ``mask == 0`` are overwritten with 0 on construction so that no
    downstream computation can depend on them.
    """

    values: np.ndarray
    mask: np.ndarray
    dist: Distribution = field(default_factory=Distribution.gaussian)
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ContractError("block values must be a 2-d matrix")
        mask = np.asarray(self.mask)
        if mask.shape != values.shape:
            raise ContractError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ContractError("mask entries must be exactly 0 or 1")
        mask = mask.astype(bool)
        values = np.where(mask, values, 0.0)
        observed = values[mask]
        if not np.all(np.isfinite(observed)):
            raise ContractError("observed values must be finite")
        if self.dist.family == BERNOULLI and not np.all((observed == 0) | (observed == 1)):
            raise ContractError("bernoulli block observed values must be 0 or 1")
        if self.dist.family == POISSON and not np.all(
            (observed >= 0) & (observed == np.round(observed))
        ):
            raise ContractError("poisson block observed values must be non-negative integers")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        weights = mask.astype(float)
        weights.setflags(write=False)
        object.__setattr__(self, "_wf", weights)

    @classmethod
    def from_array(cls, X, dist=None, name="") -> "DataBlock":
        """Build a block treating NaN cells as missing."""
        X = np.asarray(X, dtype=float)
        mask = ~np.isnan(X)
        return cls(np.where(mask, X, 0.0), mask, dist or Distribution.gaussian(), name)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def weights(self) -> np.ndarray:
        return self._wf

    def with_mask(self, mask) -> "DataBlock":
        return DataBlock(self.values, mask, self.dist, self.name)

    def with_dist(self, dist: Distribution) -> "DataBlock":
        return DataBlock(self.values, self.mask, dist, self.name)


def log_partition(dist: Distribution, theta):
    theta = np.asarray(theta, dtype=float)
    if dist.family == GAUSSIAN:
        return 0.5 * theta * theta
    if dist.family == BERNOULLI:
        # log(1+e^t) = max(t,0) + log1p(e^-|t|); never overflows
        return np.maximum(theta, 0.0) + np.log1p(np.exp(-np.abs(theta)))
    return np.exp(theta)


def mean_map(dist: Distribution, theta):
    theta = np.asarray(theta, dtype=float)
    if dist.family == GAUSSIAN:
        return theta.copy()
    if dist.family == BERNOULLI:
        return expit(theta)
    return np.exp(theta)


def curvature_bound(dist: Distribution, theta_matrix, mask=None) -> float:
    """Upper bound on ``b''`` over the entries that enter the quadratic majorizer.

    For Poisson blocks only observed cells (``mask == 1``) count.
    """
    theta = np.asarray(theta_matrix, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidStateError("natural parameters contain non-finite entries")
    if dist.family == GAUSSIAN:
        return 1.0
    if dist.family == BERNOULLI:
        return 0.25
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.any():
            theta = theta[mask]
    if theta.size == 0:
        return 1.0
    return float(np.exp(theta.max()))


def _check_shape(block: DataBlock, theta: np.ndarray):
    if theta.shape != block.shape:
        raise ContractError(f"theta shape {theta.shape} != block shape {block.shape}")


def block_neg_loglik(block: DataBlock, theta) -> float:
    """``(1/alpha) * (<W, b(theta)> - <W * X, theta>)`` for one block."""
    return loglik_terms(block, theta, with_residual=False)[0]


def loglik_terms(block: DataBlock, theta, with_residual: bool = True):
    """Negative log-likelihood and the masked residual ``W * (b'(theta) - X)``.

    Both share the expensive elementwise work, so the solver asks for them
    together. The residual is not divided by ``alpha``.
    """
    theta = np.asarray(theta, dtype=float)
    _check_shape(block, theta)
    W = block._wf
    family = block.dist.family
    # masked cells of values are zero, so <W * X, theta> = <X, theta>
    linear = np.vdot(block.values, theta)
    if family == GAUSSIAN:
        partial = 0.5 * np.vdot(W, theta * theta)
    elif family == BERNOULLI:
        e = np.abs(theta)
        np.negative(e, out=e)
        np.exp(e, out=e)
        partial = np.vdot(W, np.log1p(e)) + np.vdot(W, np.maximum(theta, 0.0))
    else:
        partial = np.vdot(W, np.exp(theta))
    nll = float((partial - linear) / block.dist.alpha)
    if not with_residual:
        return nll, None
    resid = mean_map(block.dist, theta)
    resid -= block.values
    resid *= W
    return nll, resid


def pseudo_data(block: DataBlock, theta_k, rho: float, residual=None) -> np.ndarray:
    """Working response of the quadratic majorizer anchored at ``theta_k``.

    Masked cells carry ``theta_k`` forward unchanged. ``residual`` may pass a
    precomputed ``W * (b'(theta_k) - X)``.
    """
    theta_k = np.asarray(theta_k, dtype=float)
    _check_shape(block, theta_k)
    if residual is None:
        residual = loglik_terms(block, theta_k)[1]
    return theta_k - residual / rho
