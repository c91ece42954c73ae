"""Group concave penalties on loading columns and their thresholding operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError

GDP = "gdp"
LQ = "lq"
LASSO = "lasso"
PENALTY_FAMILIES = (GDP, LQ, LASSO)


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family, its hyper-parameter and per-block tuning weights.

    Parameters
    ----------
    family : {"gdp", "lq", "lasso"}
        ``log(1 + s/gamma)``, ``s**q`` or ``s`` applied to each group norm ``s``.
    lambdas : sequence of float
        One tuning weight per block.
    gamma : float
        GDP scale, default 1.
    q : float
        Bridge exponent in (0, 1].
    column_weights : sequence of float, optional
        Per-block multipliers; ``None`` means ``sqrt(J_l)`` filled in by the
        solver from the block sizes.
    """

    family: str = GDP
    lambdas: tuple = ()
    gamma: float = 1.0
    q: float = 1.0
    column_weights: tuple | None = None

    def __post_init__(self):
        if self.family not in PENALTY_FAMILIES:
            raise ContractError(f"unknown penalty family {self.family!r}")
        if not self.gamma > 0:
            raise ContractError("gamma must be positive")
        if not 0 < self.q <= 1:
            raise ContractError("q must lie in (0, 1]")
        lambdas = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if any(not (v >= 0 and np.isfinite(v)) for v in lambdas):
            raise ContractError("lambdas must be finite and non-negative")
        object.__setattr__(self, "lambdas", lambdas)
        if self.column_weights is not None:
            object.__setattr__(
                self, "column_weights", tuple(float(v) for v in self.column_weights)
            )

    def with_lambdas(self, lambdas) -> "PenaltySpec":
        return PenaltySpec(self.family, tuple(lambdas), self.gamma, self.q, self.column_weights)

    def block_weights(self, block_sizes) -> np.ndarray:
        if self.column_weights is not None:
            return np.asarray(self.column_weights, dtype=float)
        return np.sqrt(np.asarray(block_sizes, dtype=float))

    def value(self, sigma):
        return penalty_value(self, sigma)

    def supergradient(self, sigma):
        return supergradient(self, sigma)


def penalty_value(spec: PenaltySpec, sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ContractError("group norm must be non-negative")
    if spec.family == GDP:
        out = np.log1p(sigma / spec.gamma)
    elif spec.family == LQ:
        out = sigma**spec.q
    else:
        out = sigma.copy()
    return float(out) if out.ndim == 0 else out


def supergradient(spec: PenaltySpec, sigma):
    """Slope of a linear upper bound of the penalty at ``sigma``.

    The bridge penalty with ``q < 1`` has an infinite supergradient at 0,
    returned as ``np.inf``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if spec.family == GDP:
        out = 1.0 / (spec.gamma + sigma)
    elif spec.family == LASSO or spec.q == 1.0:
        out = np.ones_like(sigma)
    else:
        safe = np.where(sigma > 0, sigma, 1.0)
        out = np.where(sigma > 0, spec.q * safe ** (spec.q - 1), np.inf)
    return float(out) if out.ndim == 0 else out


def group_prox(v, lambda_tilde):
    """Block soft-thresholding ``max(0, 1 - lambda/||v||) * v``.

    Returns the zero vector when ``||v|| <= lambda`` (including infinite
    ``lambda``).
    """
    v = np.asarray(v, dtype=float)
    if lambda_tilde < 0:
        raise ContractError("threshold must be non-negative")
    norm = np.linalg.norm(v)
    if norm <= lambda_tilde or norm == 0.0:
        return np.zeros_like(v)
    return (1.0 - lambda_tilde / norm) * v
