import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dnaol.nacm import (AnalysisModel, cosparsity, extract_features, prox_equivalence_check,
                        prox_l1, select)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def scalar_selector_bruteforce(v, lam):
    """Selector value from its defining minimization over a grid, scaled by lam."""
    grid = np.linspace(-10, 10, 200001)
    return lam * grid[np.argmin(np.abs(grid) + 0.5 * (grid - v) ** 2)]


def test_identity_operator_unit_scale():
    m = AnalysisModel(np.eye(3), 1.0)
    np.testing.assert_array_equal(extract_features(m, np.array([2.0, 0.5, -3.0])), [1, 0, -2])


def test_zero_scale_annihilates(rng):
    m = AnalysisModel(rng.standard_normal((5, 4)), 0.0)
    assert not np.any(extract_features(m, rng.standard_normal((4, 7))))


def test_half_scale_example():
    f = select(np.array([1.0, -1.5, 4.0]), 0.5)
    np.testing.assert_allclose(f, [0, -0.25, 1.5], atol=0, rtol=0)
    oracle = [scalar_selector_bruteforce(v, 0.5) for v in (1.0, -1.5, 4.0)]
    np.testing.assert_allclose(f, oracle, atol=1e-4)
    assert cosparsity(f, 1e-12) == 1


def test_cosparsity_examples():
    assert cosparsity(np.array([1.0, 0.0, -2.0]), 0) == 1
    assert cosparsity(np.zeros(6), 0) == 6
    with pytest.raises(ValueError):
        cosparsity(np.zeros(3), -1.0)


def test_shape_mismatch_raises(rng):
    m = AnalysisModel(rng.standard_normal((5, 4)), 1.0)
    with pytest.raises(ValueError, match="shape|dimension"):
        extract_features(m, rng.standard_normal((3, 2)))


@pytest.mark.parametrize("A, lam", [
    (np.zeros((0, 3)), 1.0),
    (np.array([[np.nan]]), 1.0),
    (np.eye(2), -0.1),
    (np.eye(2), np.inf),
])
def test_model_validation(A, lam):
    with pytest.raises(ValueError):
        AnalysisModel(A, lam)


def test_prox_examples(rng):
    sel, prox, diff = prox_equivalence_check(np.array([2.0, -0.3]), 1.0)
    np.testing.assert_array_equal(sel, [1.0, 0.0])
    assert diff == 0
    sel, prox, diff = prox_equivalence_check(np.zeros(4))
    assert not np.any(sel) and not np.any(prox) and diff == 0
    v = rng.standard_normal(100)
    _, prox, diff = prox_equivalence_check(v, 1.0)
    assert diff <= 1e-12
    # the prox minimizes |f| + 1/2 (f - v)^2; check a few entries by brute force
    grid = np.arange(-5, 5, 1e-4)
    for vi, pi in zip(v[:10], prox[:10]):
        assert abs(grid[np.argmin(np.abs(grid) + 0.5 * (grid - vi) ** 2)] - pi) <= 1e-4


def test_prox_other_weight():
    np.testing.assert_allclose(prox_l1(np.array([3.0, -0.5, -4.0]), 2.0), [1.0, 0.0, -2.0])
    with pytest.raises(ValueError):
        prox_equivalence_check(np.ones(2), 0.0)


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       st.floats(0, 3))
def test_sign_preservation_and_dead_zone(V, lam):
    f = select(V, lam)
    nz = f != 0
    assert np.all(np.sign(f[nz]) == np.sign(V[nz]))
    if lam > 0:
        np.testing.assert_array_equal(~nz, np.abs(V) <= 1)
    else:
        assert not np.any(nz)


@given(arrays(float, (4, 3), elements=finite), arrays(float, (3, 5), elements=finite),
       st.floats(0.01, 3), st.floats(0.01, 0.99))
def test_shrinking_input_never_lowers_cosparsity(A, X, lam, s):
    m = AnalysisModel(A, lam)
    for i in range(X.shape[1]):
        assert cosparsity(extract_features(m, s * X[:, i])) >= cosparsity(extract_features(m, X[:, i]))


@given(arrays(float, (4, 3), elements=finite), arrays(float, (3, 6), elements=finite),
       st.floats(0, 3))
def test_separability_bitwise(A, X, lam):
    m = AnalysisModel(A, lam)
    F = extract_features(m, X)
    cols = np.stack([extract_features(m, X[:, i]) for i in range(X.shape[1])], axis=1)
    entries = np.array([[select(float((A @ X[:, i])[j]), lam) for i in range(6)]
                        for j in range(4)])
    assert np.array_equal(F, cols) and np.array_equal(F, entries)
    assert F.shape == (4, 6)


@given(arrays(float, st.integers(1, 200), elements=st.floats(-1e3, 1e3)))
def test_prox_identity_property(v):
    assert prox_equivalence_check(v)[2] <= 1e-12
