import numpy as np
import pytest

from drme.kernels import GaussianKernel
from drme.nuisance import fit_outcome_regression, fit_propensity
from drme.drscore import FeatureMap


def small_problem(seed, n=40, d_x=2, d_y=1, n_eta=60):
    """A fitted nuisance pair and a DR feature map on fresh evaluation rows."""
    rng = np.random.default_rng(seed)

    def draw(m):
        X = rng.standard_normal((m, d_x))
        p = 1.0 / (1.0 + np.exp(-0.8 * X[:, 0]))
        A = (rng.random(m) < p).astype(int)
        Y = X[:, :1] * np.ones(d_y) + 0.7 * A[:, None] + rng.standard_normal((m, d_y))
        return X, A, Y

    Xe, Ae, Ye = draw(n_eta)
    prop = fit_propensity(Xe, Ae, clip=(0.05, 0.95))
    reg = fit_outcome_regression(Xe, Ae, Ye, GaussianKernel(1.3))
    X, A, Y = draw(n)
    kernel = GaussianKernel(1.1)
    return FeatureMap(X, A, Y, prop, reg, kernel, "dr"), rng


@pytest.fixture
def fmap_1d():
    fmap, _ = small_problem(11)
    return fmap
