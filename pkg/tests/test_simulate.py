import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesca.exceptions import ContractError, SimulationInfeasibleError
from pesca.expfam import BERNOULLI
from pesca.simulate import (
    CASES, STRUCTURES, SUPPORTS, SimulationSpec, beta_parameters, calibrate_snr, parse_preset,
    preset_spec, simulate_blocks, simulate_loadings, simulate_offsets, simulate_scores,
)

SMALL = dict(sizes=(200, 100, 50), I=100)


@settings(max_examples=25)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_scores_constraints(I, seed):
    R = I - 1 if seed % 2 else (I - 1) // 2
    U = simulate_scores(I, R, seed)
    assert np.linalg.norm(U.T @ U - np.eye(R)) <= 1e-10
    assert np.abs(U.sum(axis=0)).max(initial=0.0) <= 1e-10


def test_scores_boundary_and_determinism():
    assert simulate_scores(10, 9, 1).shape == (10, 9)
    np.testing.assert_array_equal(simulate_scores(10, 4, 3), simulate_scores(10, 4, 3))
    with pytest.raises(ContractError):
        simulate_scores(10, 10, 0)


def test_loadings_zero_pattern():
    sizes = (1000, 500, 100)
    pattern = [(SUPPORTS[n], 3) for n in STRUCTURES]
    V, overlap = simulate_loadings(sizes, pattern, 0)
    edges = np.cumsum((0,) + sizes)
    for g, name in enumerate(STRUCTURES):
        cols = slice(3 * g, 3 * g + 3)
        for l in range(3):
            rows = slice(edges[l], edges[l + 1])
            if l in SUPPORTS[name]:
                assert np.all(V[rows, cols] != 0)
            else:
                assert np.all(V[rows, cols] == 0.0)
        Vg = V[:, cols]
        assert np.linalg.norm(Vg.T @ Vg - np.eye(3)) <= 1e-12
    d1, d3 = STRUCTURES.index("D1"), STRUCTURES.index("D3")
    assert np.all(V[:, 3 * d1:3 * d1 + 3].T @ V[:, 3 * d3:3 * d3 + 3] == 0.0)
    assert 0 < overlap < 1
    with pytest.raises(ContractError):
        simulate_loadings(sizes, [((), 3)], 0)


def test_calibrate_snr():
    d = np.array([1.0, 2.0, 2.0])
    assert calibrate_snr(d, np.sum(d * d), 1.0) == pytest.approx(1.0)
    assert calibrate_snr(d, 3.0, 2.0) / calibrate_snr(d, 3.0, 1.0) == pytest.approx(np.sqrt(2))
    assert calibrate_snr(d, 3.0, 0.0) is None


def test_offsets():
    assert beta_parameters(0.1, 100) == pytest.approx((11.0, 91.0))
    assert simulate_offsets("gaussian", 5, seed=0).shape == (5,)
    mu = simulate_offsets(BERNOULLI, 20000, seed=0)
    p = 1 / (1 + np.exp(-mu))
    assert p.mean() == pytest.approx(11 / 102, abs=2e-3)


@pytest.mark.parametrize("seed", range(3))
def test_case3_realized_snr_and_constraints(seed):
    blocks, truth = simulate_blocks(preset_spec("ggg", 3, seed=seed, **SMALL))
    for name in STRUCTURES:
        assert truth.realized_snrs[name] == pytest.approx(1.0, abs=1e-12)
    assert [b.shape for b in blocks] == [(100, 200), (100, 100), (100, 50)]
    for l, b in enumerate(blocks):
        np.testing.assert_allclose(truth.thetas[l], truth.offsets[l] + truth.U @ truth.loadings[l].T)


def test_case7_offsets_only():
    blocks, truth = simulate_blocks(preset_spec("ggg", 7, seed=0, **SMALL))
    for l in range(3):
        np.testing.assert_array_equal(truth.thetas[l], np.broadcast_to(truth.offsets[l], truth.thetas[l].shape))
    assert truth.realized_snrs == {}


def test_binary_ones_fraction():
    fracs = []
    for seed in range(20):
        blocks, _ = simulate_blocks(preset_spec("bbb", 3, seed=seed, sizes=(400, 200, 100)))
        fracs.append(np.mean([b.values.mean() for b in blocks]))
    assert 0.03 <= min(fracs) and max(fracs) <= 0.3


def test_same_seed_same_data():
    a, _ = simulate_blocks(preset_spec("gbb", 2, seed=4, **SMALL))
    b, _ = simulate_blocks(preset_spec("gbb", 2, seed=4, **SMALL))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_infeasible_rejection():
    spec = SimulationSpec(I=30, block_sizes=(20, 20, 20), max_attempts=3)
    with pytest.raises(SimulationInfeasibleError):
        simulate_blocks(spec)


def test_spec_contracts_and_presets():
    with pytest.raises(ContractError):
        SimulationSpec(structure_snrs=(1,) * 6)
    with pytest.raises(ContractError):
        SimulationSpec(I=20)
    assert parse_preset("bbb-case3") == ("bbb", 3)
    assert preset_spec("bbb", 3).I == 200 and preset_spec("ggg", 3).I == 100
    with pytest.raises(ContractError):
        parse_preset("case3")
    spec = preset_spec("ggb", 5, seed=2)
    assert SimulationSpec.from_dict(spec.to_dict()) == spec
    assert set(CASES) == set(range(1, 8))
