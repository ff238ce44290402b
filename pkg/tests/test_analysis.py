import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptbo.analysis import leading_eigenvector, principal_components


def pairwise(x):
    return np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))


@pytest.mark.parametrize("seed", range(5))
def test_two_dimensional_data_is_only_rotated(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 2)) * [3.0, 1.0]
    x -= x.mean(0)
    scores, loadings, var = principal_components(x, 2)
    np.testing.assert_allclose(pairwise(scores), pairwise(x), atol=1e-9)
    np.testing.assert_allclose(loadings.T @ loadings, np.eye(2), atol=1e-9)
    assert var[0] >= var[1]


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(3, 30), st.integers(2, 8))
def test_components_match_eigh(seed, n, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * np.linspace(3, 0.5, d)
    scores, loadings, var = principal_components(x, 2)
    c = x - x.mean(0)
    w, v = np.linalg.eigh(c.T @ c / n)
    w, v = w[::-1], v[:, ::-1]
    assert var[0] >= var[1]
    np.testing.assert_allclose(var, w[:2], rtol=1e-6, atol=1e-9)
    # directions agree up to sign whenever the eigengap makes them identifiable
    for k in range(2):
        gap = min(abs(w[k] - w[j]) for j in range(d) if j != k)
        if gap > 1e-3 * w[0]:
            assert abs(abs(loadings[:, k] @ v[:, k]) - 1) < 1e-5


def test_sign_fix_makes_largest_loading_positive():
    x = np.random.default_rng(0).normal(size=(40, 5)) * [1, 5, 2, 1, 1]
    _, loadings, _ = principal_components(x, 2)
    for k in range(2):
        col = loadings[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_deterministic():
    x = np.random.default_rng(3).normal(size=(15, 6))
    a, b = principal_components(x), principal_components(x.copy())
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_one_dimensional_data_gives_one_component():
    scores, loadings, var = principal_components(np.arange(5.0)[:, None], 2)
    assert scores.shape == (5, 1) and var[0] == pytest.approx(2.0)


def test_zero_matrix():
    lam, v = leading_eigenvector(np.zeros((3, 3)))
    assert lam == 0.0 and np.linalg.norm(v) == pytest.approx(1.0)


def test_rejects_empty():
    with pytest.raises(ValueError):
        principal_components(np.zeros((0, 3)))
