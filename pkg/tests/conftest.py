import numpy as np
import pytest

from pesca.expfam import BERNOULLI, GAUSSIAN, POISSON, DataBlock, Distribution


def random_blocks(types, sizes=(40, 30, 20), I=50, seed=0, rank=3, missing=0.0):
    """Blocks drawn from a shared low-rank natural parameter."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((I, rank))
    blocks = []
    for t, J in zip(types, sizes):
        theta = A @ rng.standard_normal((rank, J)) + rng.standard_normal(J)
        if t == GAUSSIAN:
            X = theta + rng.standard_normal((I, J))
        elif t == BERNOULLI:
            X = (rng.random((I, J)) < 1 / (1 + np.exp(-theta))).astype(float)
        else:
            X = rng.poisson(np.exp(np.clip(theta / 3, -3, 2))).astype(float)
        mask = rng.random((I, J)) >= missing
        blocks.append(DataBlock(X, mask, Distribution(t)))
    return blocks


@pytest.fixture
def gbg_blocks():
    return random_blocks((GAUSSIAN, BERNOULLI, GAUSSIAN))


@pytest.fixture
def ggg_blocks():
    return random_blocks((GAUSSIAN, GAUSSIAN, GAUSSIAN), seed=1)


@pytest.fixture
def families():
    return (GAUSSIAN, BERNOULLI, POISSON)
