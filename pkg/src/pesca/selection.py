"""Missing-value cross-validation over warm-started lambda chains."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ContractError, PescaError, StratificationError
from .expfam import BERNOULLI, GAUSSIAN, block_neg_loglik
from .penalty import PenaltySpec
from .solver import ACTIVE_TOL, EscaModel, FitConfig, FitResult, fit

log = logging.getLogger(__name__)

DEFAULT_GRIDS = {GAUSSIAN: (1.0, 500.0, 30), BERNOULLI: (1.0, 100.0, 30)}


@dataclass
class HoldoutSplit:
    test_masks: list
    train_masks: list

    def train_blocks(self, blocks) -> list:
        return [b.with_mask(m) for b, m in zip(blocks, self.train_masks)]

    def test_counts(self) -> list:
        return [int(m.sum()) for m in self.test_masks]


def make_holdout(blocks, fraction: float = 0.1, seed=None) -> HoldoutSplit:
    """Hold out ``fraction`` of the observed cells of each block.

    Binary blocks are stratified: the fraction is taken separately from the
    observed ones and zeros.
    """
    if not 0 < fraction < 1:
        raise ContractError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    tests, trains = [], []
    for l, b in enumerate(blocks):
        if b.n_observed < 10:
            raise ContractError(f"block {l} has fewer than 10 observed cells")
        flat_mask = b.mask.ravel()
        if b.dist.family == BERNOULLI:
            flat_vals = b.values.ravel()
            strata = [np.flatnonzero(flat_mask & (flat_vals == 1)),
                      np.flatnonzero(flat_mask & (flat_vals == 0))]
            if strata[0].size == 0:
                raise StratificationError(f"binary block {l} has no observed ones")
            if strata[1].size == 0:
                raise StratificationError(f"binary block {l} has no observed zeros")
        else:
            strata = [np.flatnonzero(flat_mask)]
        test = np.zeros(flat_mask.size, dtype=bool)
        for cells in strata:
            k = int(round(fraction * cells.size))
            test[rng.choice(cells, size=k, replace=False)] = True
        test = test.reshape(b.shape)
        tests.append(test)
        trains.append(b.mask & ~test)
    return HoldoutSplit(tests, trains)


def cv_error(model: EscaModel, blocks, split: HoldoutSplit) -> np.ndarray:
    """Per-block negative log-likelihood of the held-out cells."""
    out = np.empty(len(blocks))
    for l, b in enumerate(blocks):
        out[l] = block_neg_loglik(b.with_mask(split.test_masks[l]), model.theta(l))
    return out


def lambda_grid(lo: float, hi: float, n: int = 30) -> np.ndarray:
    """``n`` ascending values equally spaced in log-space over ``[lo, hi]``."""
    if not (0 < lo < hi):
        raise ContractError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if n < 2:
        raise ContractError("a grid needs at least two points")
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), int(n)))
    grid[0], grid[-1] = lo, hi
    return grid


@dataclass
class GridPoint:
    stage: str
    lam: float
    lambdas: tuple
    cv_errors: np.ndarray
    score: float
    active_groups: int
    n_components: int
    iterations: int
    converged: bool
    reactivated: int

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "lambda": self.lam,
            "lambdas": list(self.lambdas),
            "cv_errors": [float(v) for v in self.cv_errors],
            "score": self.score,
            "active_groups": self.active_groups,
            "n_components": self.n_components,
            "iterations": self.iterations,
            "converged": self.converged,
            "reactivated": self.reactivated,
        }


@dataclass
class SelectionTrace:
    """Chain record, the chosen grid point and the final full-data refit."""

    points: list
    chosen_index: int
    lambdas: tuple
    final: FitResult | None = None
    stage_choices: dict = field(default_factory=dict)

    @property
    def lambda_grid(self) -> list:
        return [p.lam for p in self.points]

    @property
    def chosen(self) -> GridPoint:
        return self.points[self.chosen_index]

    @property
    def reactivations(self) -> int:
        return sum(p.reactivated for p in self.points)

    def to_dict(self) -> dict:
        return {
            "points": [p.to_dict() for p in self.points],
            "chosen_index": self.chosen_index,
            "lambdas": list(self.lambdas),
            "stage_choices": dict(self.stage_choices),
            "final": None if self.final is None else {
                "iterations": self.final.iterations,
                "converged": self.final.converged,
                "objective": self.final.objective,
                "active_groups": self.final.model.active_groups(),
                "n_components": self.final.model.n_components(),
            },
        }


class SelectionFitError(PescaError):
    """A fit inside a selection chain failed; ``lambdas`` names the grid point."""

    def __init__(self, lambdas, cause):
        super().__init__(f"fit failed at lambdas={tuple(lambdas)}: {cause}")
        self.lambdas = tuple(lambdas)
        self.__cause__ = cause


def _as_grid(grid) -> np.ndarray:
    if isinstance(grid, tuple) and len(grid) == 3 and isinstance(grid[2], int):
        return lambda_grid(*grid)
    return np.atleast_1d(np.asarray(grid, dtype=float))


def _run_chain(stage, train, blocks, split, penalty, lambdas_for, grid, config, init, score_blocks):
    points, models = [], []
    model = init
    for lam in grid:
        lambdas = lambdas_for(lam)
        try:
            res = fit(train, penalty.with_lambdas(lambdas), config, init=model)
        except PescaError as exc:
            raise SelectionFitError(lambdas, exc) from exc
        errs = cv_error(res.model, blocks, split)
        prev_active = None if model is None else model.sigma_table() > ACTIVE_TOL
        now_active = res.model.sigma_table() > ACTIVE_TOL
        reactivated = 0
        if prev_active is not None and prev_active.shape == now_active.shape:
            reactivated = int((now_active & ~prev_active).sum())
        points.append(GridPoint(
            stage=stage, lam=float(lam), lambdas=tuple(lambdas), cv_errors=errs,
            score=float(errs[score_blocks].sum()), active_groups=int(now_active.sum()),
            n_components=res.model.n_components(), iterations=res.iterations,
            converged=res.converged, reactivated=reactivated,
        ))
        models.append(res.model)
        model = res.model
        log.info("%s lambda=%.4g cv=%.6g active=%d iters=%d", stage, lam,
                 points[-1].score, points[-1].active_groups, res.iterations)
    scores = np.array([p.score for p in points])
    best = int(np.flatnonzero(scores == scores.min())[0])
    return points, models, best


def _refit(blocks, penalty, lambdas, config, init) -> FitResult:
    refit_config = replace(config, epsilon_f=min(config.epsilon_f, 1e-8))
    try:
        return fit(blocks, penalty.with_lambdas(lambdas), refit_config, init=init)
    except PescaError as exc:
        raise SelectionFitError(lambdas, exc) from exc


def select_single_type(blocks, grid, fit_config: FitConfig | None = None, seed=0,
                       penalty: PenaltySpec | None = None, fraction: float = 0.1,
                       split: HoldoutSplit | None = None, refit: bool = True) -> SelectionTrace:
    """Warm-started ascending chain with one shared lambda for every block."""
    config = fit_config or FitConfig(seed=seed)
    penalty = penalty or PenaltySpec()
    grid = _as_grid(grid)
    if np.any(np.diff(grid) < 0):
        raise ContractError("the lambda grid must be ascending")
    split = split or make_holdout(blocks, fraction, seed)
    train = split.train_blocks(blocks)
    L = len(blocks)
    all_blocks = np.arange(L)
    points, models, best = _run_chain(
        "single", train, blocks, split, penalty, lambda lam: (lam,) * L, grid, config, None, all_blocks,
    )
    lambdas = points[best].lambdas
    trace = SelectionTrace(points, best, lambdas, stage_choices={"single": best})
    if refit:
        trace.final = _refit(blocks, penalty, lambdas, config, models[best])
    return trace


def select_mixed(blocks, grid_g, grid_b, fit_config: FitConfig | None = None, seed=0,
                 penalty: PenaltySpec | None = None, fraction: float = 0.1,
                 split: HoldoutSplit | None = None, refit: bool = True) -> SelectionTrace:
    """Two-stage search with one lambda for quantitative and one for binary blocks.

    Stage 1 pins the quantitative lambda at the floor of ``grid_g`` and scores
    binary test cells; stage 2 pins the chosen binary lambda, starts from the
    stage-1 winner and scores quantitative test cells.
    """
    config = fit_config or FitConfig(seed=seed)
    penalty = penalty or PenaltySpec()
    types = [b.dist.family for b in blocks]
    gauss = np.array([t == GAUSSIAN for t in types])
    binary = np.array([t == BERNOULLI for t in types])
    if not binary.any():
        raise ContractError("no binary block present; use select_single_type")
    if not gauss.any():
        raise ContractError("no quantitative block present; use select_single_type")
    if not np.all(gauss | binary):
        raise ContractError("mixed selection handles gaussian and bernoulli blocks only")
    grid_g = _as_grid(grid_g)
    grid_b = _as_grid(grid_b)
    split = split or make_holdout(blocks, fraction, seed)
    train = split.train_blocks(blocks)

    def lambdas(lg, lb):
        return tuple(lg if g else lb for g in gauss)

    lam_g0 = float(grid_g.min())
    pts1, models1, best1 = _run_chain(
        "binary", train, blocks, split, penalty, lambda lb: lambdas(lam_g0, lb), grid_b,
        config, None, np.flatnonzero(binary),
    )
    lam_b = pts1[best1].lam
    pts2, models2, best2 = _run_chain(
        "quantitative", train, blocks, split, penalty, lambda lg: lambdas(lg, lam_b), grid_g,
        config, models1[best1], np.flatnonzero(gauss),
    )
    points = pts1 + pts2
    chosen = len(pts1) + best2
    chosen_lambdas = points[chosen].lambdas
    trace = SelectionTrace(points, chosen, chosen_lambdas,
                           stage_choices={"binary": best1, "quantitative": chosen})
    if refit:
        trace.final = _refit(blocks, penalty, chosen_lambdas, config, models2[best2])
    return trace


def select(blocks, fit_config=None, seed=0, penalty=None, grids=None, fraction=0.1) -> SelectionTrace:
    """Dispatch to single-type or mixed selection based on the block types."""
    grids = {**DEFAULT_GRIDS, **(grids or {})}
    families = {b.dist.family for b in blocks}
    if families == {GAUSSIAN, BERNOULLI}:
        return select_mixed(blocks, grids[GAUSSIAN], grids[BERNOULLI], fit_config, seed, penalty, fraction)
    if len(families) != 1:
        raise ContractError(f"unsupported block-type mix {sorted(families)}")
    family = families.pop()
    grid = grids.get(family, DEFAULT_GRIDS[GAUSSIAN])
    return select_single_type(blocks, grid, fit_config, seed, penalty, fraction)
