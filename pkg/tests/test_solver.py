import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_blocks
from pesca.exceptions import ContractError
from pesca.expfam import BERNOULLI, GAUSSIAN, POISSON, DataBlock, Distribution, block_neg_loglik
from pesca.penalty import PenaltySpec
from pesca.solver import (
    EscaModel, FitConfig, centered_orthonormalize, fit, initialize, objective, sca_oracle,
    surrogate, update_loadings, update_offsets, update_scores, variation_explained,
)

GDP5 = PenaltySpec("gdp", lambdas=(5.0,), gamma=1.0)


def assert_constraints(A, tol=1e-9):
    assert np.linalg.norm(A.T @ A - np.eye(A.shape[1])) <= tol
    assert np.abs(A.sum(axis=0)).max() <= tol


def test_initialize_full_rank_reconstructs_centered_block():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 5))
    b = DataBlock(X, np.ones_like(X))
    m = initialize([b], R=5)
    np.testing.assert_allclose(m.scores @ m.loadings[0].T, X - X.mean(axis=0), atol=1e-8)
    assert_constraints(m.scores)


def test_initialize_rank_one_varexp():
    rng = np.random.default_rng(1)
    a = rng.normal(size=20)
    X = np.outer(a - a.mean(), rng.normal(size=15))
    b = DataBlock(X, np.ones_like(X))
    ve = variation_explained(initialize([b], R=1), [b])
    assert ve.per_component[0, 0] >= 0.999
    assert ve.per_block[0] == pytest.approx(1.0)


def test_initialize_contracts():
    b = DataBlock(np.zeros((5, 3)), np.ones((5, 3)))
    with pytest.raises(ContractError):
        initialize([b], R=5)
    with pytest.raises(ContractError):
        initialize([b, DataBlock(np.zeros((4, 3)), np.ones((4, 3)))], R=1)
    with pytest.raises(ContractError):
        initialize([DataBlock(np.zeros((5, 3)), np.zeros((5, 3)))], R=1)


def test_objective_examples():
    b = DataBlock(np.zeros((4, 9)), np.ones((4, 9)))
    zero = EscaModel([np.zeros(9)], centered_orthonormalize(np.eye(4)[:, :1]), [np.zeros((9, 1))])
    assert objective(zero, [b], PenaltySpec(lambdas=(0.0,))) == 0.0
    one = EscaModel([np.zeros(9)], zero.scores, [np.eye(9)[:, :1]])
    nll = block_neg_loglik(b, one.theta(0))
    assert objective(one, [b], PenaltySpec(lambdas=(2.0,))) - nll == pytest.approx(2 * 3 * np.log(2))


def test_update_offsets_examples():
    assert update_offsets([np.array([[1.0], [3.0]])])[0] == pytest.approx([2.0])
    H = np.tile([4.0, -1.0], (3, 1))
    np.testing.assert_allclose(update_offsets([H])[0], [4.0, -1.0])


def test_update_scores_identity_case():
    Q = centered_orthonormalize(np.random.default_rng(0).normal(size=(10, 3)))
    A = update_scores(Q, np.eye(3))
    np.testing.assert_allclose(A, Q, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_update_scores_constraints_even_when_rank_deficient(seed):
    rng = np.random.default_rng(seed)
    JH = rng.normal(size=(12, 9))
    JH -= JH.mean(axis=0)
    B = rng.normal(size=(9, 4))
    B[:, 2:] = 0.0
    A, deficient = update_scores(JH, B, return_info=True)
    assert deficient
    assert_constraints(A, 1e-10)


def test_update_loadings_zero_lambda_and_threshold():
    rng = np.random.default_rng(0)
    JH = rng.normal(size=(30, 8))
    JH -= JH.mean(axis=0)
    A = centered_orthonormalize(rng.normal(size=(30, 3)))
    P = JH.T @ A
    np.testing.assert_allclose(update_loadings(JH, A, GDP5, 0.0, 1.0, np.ones(3), 1.0, 1.0), P)
    huge = update_loadings(JH, A, GDP5, 1e6, 1.0, np.zeros(3), 1.0, 1.0)
    assert np.all(huge == 0.0)
    # Lq at a zero column: infinite threshold keeps it at zero
    lq = update_loadings(JH, A, PenaltySpec("lq", q=0.5), 1e-3, 1.0, np.array([0.0, 1.0, 1.0]), 1.0, 1.0)
    assert np.all(lq[:, 0] == 0.0) and np.all(lq[:, 1] != 0.0)


@pytest.mark.parametrize("types", [
    (GAUSSIAN,) * 3, (BERNOULLI,) * 3, (GAUSSIAN, BERNOULLI, BERNOULLI), (GAUSSIAN, GAUSSIAN, BERNOULLI),
])
def test_fit_monotone_and_constrained(types):
    blocks = random_blocks(types, seed=7, missing=0.1)
    res = fit(blocks, GDP5, FitConfig(R_init=10))
    tr = res.objective_trace
    assert np.all(np.diff(tr) <= 1e-10 * np.abs(tr[:-1]))
    assert_constraints(res.model.scores)
    np.testing.assert_array_equal(res.sigma_table, res.model.sigma_table())


def test_surrogate_tangent_and_majorizes():
    blocks = random_blocks((GAUSSIAN, BERNOULLI, GAUSSIAN), seed=2)
    a = fit(blocks, GDP5, FitConfig(R_init=5, max_iter=3)).model
    b = fit(blocks, GDP5, FitConfig(R_init=5, max_iter=1), init=a).model
    assert surrogate(a, a, blocks, GDP5) == pytest.approx(objective(a, blocks, GDP5), rel=1e-12)
    assert objective(b, blocks, GDP5) <= surrogate(b, a, blocks, GDP5) + 1e-9


def test_missing_values_are_ignored():
    blocks = random_blocks((GAUSSIAN, BERNOULLI, GAUSSIAN), seed=4, missing=0.2)
    altered = []
    rng = np.random.default_rng(0)
    for b in blocks:
        junk = np.where(b.mask, b.values, rng.integers(0, 2, b.shape))
        altered.append(DataBlock(junk, b.mask, b.dist))
    r1 = fit(blocks, GDP5, FitConfig(R_init=5))
    r2 = fit(altered, GDP5, FitConfig(R_init=5))
    for t1, t2 in zip(r1.model.thetas(), r2.model.thetas()):
        np.testing.assert_allclose(t1, t2, atol=1e-12)


def test_gaussian_unpenalized_matches_sca():
    rng = np.random.default_rng(5)
    blocks = [DataBlock(rng.normal(size=(12, J)), np.ones((12, J)), Distribution.gaussian(a))
              for J, a in [(6, 1.0), (4, 2.0), (5, 0.5)]]
    res = fit(blocks, PenaltySpec(lambdas=(0.0,)), FitConfig(R_init=3, epsilon_f=1e-12, max_iter=5000))
    for t, o in zip(res.model.thetas(), sca_oracle(blocks, 3)):
        assert np.linalg.norm(t - o) <= 1e-4


def test_variation_explained_edge_cases():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4))
    b = DataBlock(X, np.ones_like(X))
    full = initialize([b], R=4)
    assert variation_explained(full, [b]).per_block[0] == pytest.approx(1.0)
    zero = EscaModel(full.offsets, full.scores, [np.zeros((4, 4))])
    assert variation_explained(zero, [b]).per_block[0] == pytest.approx(0.0)
    const = DataBlock(np.ones((10, 4)), np.ones((10, 4)))
    flat = EscaModel([np.ones(4)], full.scores, [np.zeros((4, 4))])
    assert np.isnan(variation_explained(flat, [const]).per_block[0])


def test_poisson_block_fits():
    blocks = random_blocks((POISSON, GAUSSIAN), sizes=(20, 10), seed=3)
    res = fit(blocks, PenaltySpec(lambdas=(1.0,)), FitConfig(R_init=4))
    assert np.isfinite(res.objective)
    assert_constraints(res.model.scores)


def test_fit_warm_start_checks_shapes():
    blocks = random_blocks((GAUSSIAN, GAUSSIAN), sizes=(10, 6), seed=0)
    m = initialize(blocks, R=3)
    with pytest.raises(ContractError):
        fit(blocks[:1], GDP5, init=m)
    with pytest.raises(ContractError):
        fit(blocks, PenaltySpec(lambdas=(1.0, 2.0, 3.0)))
