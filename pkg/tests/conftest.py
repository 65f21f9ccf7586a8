import numpy as np
import pytest

from dnaol.data import gen_synthetic, normalize_unit_l2, split
from dnaol.train import HyperParams

# Hyperparameters for the 4-class Gaussian-cluster fixture (n=20, unit-normalized).
SEP_FIXTURE_HP = dict(alpha=1e-2, tau=1e-2, sigma2=20.0, feature_dim=40)
NONSEP_FIXTURE_HP = dict(alpha=0.0, tau=1e-3, sigma2=1.0, feature_dim=40)


def fixture_data(seed=0, n_classes=4, per_class=100, dim=20, separation=5.0, noise=1.0,
                 train_per_class=50):
    X, y = gen_synthetic(n_classes, per_class, dim, separation, noise, seed)
    (Xtr, ytr), (Xte, yte) = split(X, y, train_per_class, seed)
    return normalize_unit_l2(Xtr)[0], ytr, normalize_unit_l2(Xte)[0], yte


def fixture_hp(scheme, **overrides):
    base = SEP_FIXTURE_HP if scheme == "sep" else NONSEP_FIXTURE_HP
    return HyperParams(**{**base, **overrides})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria register one summary line each; printed after the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
