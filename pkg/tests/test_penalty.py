import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pesca.exceptions import ContractError
from pesca.penalty import PenaltySpec, group_prox, penalty_value, supergradient

pos = st.floats(0, 1e3, allow_nan=False)


def test_penalty_values():
    gdp = PenaltySpec("gdp", gamma=2.0)
    assert penalty_value(gdp, 2.0) == pytest.approx(np.log(2.0))
    assert penalty_value(PenaltySpec("lq", q=0.5), 4.0) == pytest.approx(2.0)
    assert penalty_value(PenaltySpec("lasso"), 3.0) == 3.0
    with pytest.raises(ContractError):
        penalty_value(gdp, -1.0)


def test_supergradients():
    assert supergradient(PenaltySpec("gdp", gamma=1.0), 0.0) == 1.0
    assert supergradient(PenaltySpec("gdp", gamma=1.0), 3.0) == pytest.approx(0.25)
    assert supergradient(PenaltySpec("lq", q=0.5), 0.0) == np.inf
    assert supergradient(PenaltySpec("lq", q=0.5), 4.0) == pytest.approx(0.25)
    assert supergradient(PenaltySpec("lasso"), 7.0) == 1.0


@pytest.mark.parametrize("spec", [PenaltySpec("gdp", gamma=0.5), PenaltySpec("lq", q=0.3),
                                  PenaltySpec("lq", q=1.0), PenaltySpec("lasso")])
@given(s0=st.floats(1e-6, 1e3), s=pos)
def test_linearization_is_upper_bound(spec, s0, s):
    # concavity: g(s) <= g(s0) + g'(s0)(s - s0)
    lhs = penalty_value(spec, s)
    rhs = penalty_value(spec, s0) + supergradient(spec, s0) * (s - s0)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


def test_spec_validation():
    with pytest.raises(ContractError):
        PenaltySpec("ridge")
    with pytest.raises(ContractError):
        PenaltySpec(gamma=0.0)
    with pytest.raises(ContractError):
        PenaltySpec("lq", q=1.5)
    with pytest.raises(ContractError):
        PenaltySpec(lambdas=(-1.0,))
    assert PenaltySpec(lambdas=(1, 2)).with_lambdas((3,)).lambdas == (3.0,)
    np.testing.assert_allclose(PenaltySpec().block_weights([4, 9]), [2.0, 3.0])


def test_group_prox_examples():
    np.testing.assert_allclose(group_prox([3.0, 4.0], 1.0), [2.4, 3.2])
    assert np.all(group_prox([3.0, 4.0], 5.0) == 0.0)
    assert np.all(group_prox([3.0, 4.0], np.inf) == 0.0)
    np.testing.assert_array_equal(group_prox([3.0, 4.0], 0.0), [3.0, 4.0])
    with pytest.raises(ContractError):
        group_prox([1.0], -1.0)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(0, 200))
def test_group_prox_properties(v, lam):
    v = np.array(v)
    out = group_prox(v, lam)
    # shrinks the norm by exactly lambda, never flips direction
    assert np.linalg.norm(out) == pytest.approx(max(0.0, np.linalg.norm(v) - lam), abs=1e-9)
    assert np.dot(out, v) >= -1e-12
