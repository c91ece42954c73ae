"""Scoring fitted models against simulated ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError
from .simulate import STRUCTURES, SUPPORTS, SimulationTruth
from .solver import ACTIVE_TOL, EscaModel

_BY_SUPPORT = {frozenset(v): k for k, v in SUPPORTS.items()}


def rmse(truth, estimate) -> float:
    """Relative squared error ``||truth - estimate||^2 / ||truth||^2``.

    Returns ``nan`` when ``truth`` is identically zero.
    """
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ContractError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    denom = float(np.sum(truth * truth))
    if denom == 0.0:
        return float("nan")
    diff = truth - estimate
    return float(np.sum(diff * diff)) / denom


def _offdiag_cross(X: np.ndarray) -> np.ndarray:
    S = X @ X.T
    np.fill_diagonal(S, 0.0)
    return S


def modified_rv(X, Y) -> float:
    """RV coefficient computed on cross-product matrices with zeroed diagonals.

    Defined as 0 when either cross-product vanishes.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] != Y.shape[0]:
        raise ContractError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    Sx = _offdiag_cross(X)
    Sy = _offdiag_cross(Y)
    nx = np.linalg.norm(Sx)
    ny = np.linalg.norm(Sy)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.sum(Sx * Sy) / (nx * ny))


def assign_structures(model: EscaModel, zero_tol: float = ACTIVE_TOL):
    """Label every component by the set of blocks where it is active.

    Returns ``(labels, ranks)``: ``labels[r]`` is a structure name or
    ``"none"``; ``ranks`` maps each structure name to its component count.
    """
    if model.n_blocks != 3:
        raise ContractError("structure labels are defined for three blocks")
    active = model.sigma_table() > zero_tol
    labels = []
    for r in range(model.R):
        support = frozenset(np.flatnonzero(active[:, r]).tolist())
        labels.append(_BY_SUPPORT.get(support, "none"))
    ranks = {name: labels.count(name) for name in STRUCTURES}
    return labels, ranks


def estimated_structure(model: EscaModel, labels, name: str) -> np.ndarray:
    idx = [r for r, lab in enumerate(labels) if lab == name]
    B = np.vstack(model.loadings)
    return model.scores[:, idx] @ B[:, idx].T


@dataclass
class RecoveryReport:
    rv: dict
    ranks: dict
    rmse_theta: float
    rmse_theta_blocks: list
    rmse_mu: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rv": dict(self.rv),
            "ranks": dict(self.ranks),
            "rmse_theta": self.rmse_theta,
            "rmse_theta_blocks": list(self.rmse_theta_blocks),
            "rmse_mu": self.rmse_mu,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveryReport":
        known = {"rv", "ranks", "rmse_theta", "rmse_theta_blocks", "rmse_mu"}
        return cls(d["rv"], d["ranks"], d["rmse_theta"], d["rmse_theta_blocks"], d["rmse_mu"],
                   {k: v for k, v in d.items() if k not in known})

    def row(self) -> dict:
        """Flat record for one repetition."""
        out = {}
        for name in STRUCTURES:
            out[f"rv_{name}"] = self.rv[name]
            out[f"rank_{name}"] = self.ranks[name]
        out["rmse_theta"] = self.rmse_theta
        for l, v in enumerate(self.rmse_theta_blocks):
            out[f"rmse_theta_{l + 1}"] = v
        out["rmse_mu"] = self.rmse_mu
        out.update(self.extra)
        return out


def recovery_report(model: EscaModel, truth: SimulationTruth, zero_tol: float = ACTIVE_TOL) -> RecoveryReport:
    if model.scores.shape[0] != truth.U.shape[0]:
        raise ContractError("model and truth have different row counts")
    if [B.shape[0] for B in model.loadings] != list(truth.block_sizes):
        raise ContractError("model and truth have different block widths")
    labels, ranks = assign_structures(model, zero_tol)
    rv = {}
    for name in STRUCTURES:
        rv[name] = modified_rv(truth.structure(name), estimated_structure(model, labels, name))
    thetas_hat = model.thetas()
    rmse_blocks = [rmse(t, th) for t, th in zip(truth.thetas, thetas_hat)]
    rmse_all = rmse(np.hstack(truth.thetas), np.hstack(thetas_hat))
    rmse_mu = rmse(np.concatenate(truth.offsets), np.concatenate(model.offsets))
    return RecoveryReport(rv, ranks, rmse_all, rmse_blocks, rmse_mu)


def truth_as_model(truth: SimulationTruth) -> EscaModel:
    return EscaModel([m.copy() for m in truth.offsets], truth.U.copy(), truth.loadings)


def aggregate(reports) -> dict:
    """Mean RV, mean rank, per-run ranks and mean RMSEs over repetitions."""
    reports = list(reports)
    out = {"n": len(reports), "rv": {}, "rank": {}, "ranks": {}}
    for name in STRUCTURES:
        out["rv"][name] = float(np.mean([r.rv[name] for r in reports]))
        ranks = [int(r.ranks[name]) for r in reports]
        out["ranks"][name] = ranks
        out["rank"][name] = float(np.mean(ranks))
    out["rmse_theta"] = float(np.mean([r.rmse_theta for r in reports]))
    n_blocks = len(reports[0].rmse_theta_blocks) if reports else 0
    out["rmse_theta_blocks"] = [float(np.mean([r.rmse_theta_blocks[l] for r in reports]))
                                for l in range(n_blocks)]
    out["rmse_mu"] = float(np.mean([r.rmse_mu for r in reports]))
    return out


def format_cell(rv: float, rank: float) -> str:
    """``0.998(3)`` style cell; exact zeros print as ``0``."""
    rv_txt = "0" if rv == 0 else ("1" if round(rv, 3) == 1 else f"{rv:.3f}")
    rank_txt = f"{rank:.1f}".rstrip("0").rstrip(".")
    return f"{rv_txt}({rank_txt})"
