import numpy as np
import pytest

from torusgmrf.circulant import ThetaField
from torusgmrf.torus import TorusGeometry


def random_theta(p, rng, l1=None, density=0.5):
    """Random s-symmetric field; scaled to ``l1`` (< 1 keeps it positive definite)."""
    geom = TorusGeometry(p)
    vals = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            if (i, j) != (0, 0) and rng.random() < density:
                v = rng.normal()
                vals[i, j] = v
                vals[-i % p, -j % p] = v
    if not vals.any():
        vals[1, 0] = vals[-1 % p, 0] = 1.0
    if l1 is None:
        l1 = rng.uniform(0.05, 0.95)
    vals *= l1 / np.abs(vals).sum()
    return ThetaField(geom, vals)


def dense_conditional(S, target, cond):
    """Regression coefficients and residual variance of X[target] on X[cond]."""
    A = S[np.ix_(cond, cond)]
    beta = np.linalg.solve(A, S[cond, target])
    return beta, S[target, target] - S[target, cond] @ beta


def flat(p, pt):
    return (pt[0] % p) * p + (pt[1] % p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
