import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptbo.acquire import (
    AcquisitionScore,
    expected_improvement,
    score_arrays,
    score_pool,
    select_from_arrays,
    select_next,
)
from promptbo.errors import EmptyPool
from promptbo.surrogate import KernelParams, build_state, posterior


def monte_carlo_ei(mean, sigma, best, n=1_000_000, seed=0):
    draws = np.random.default_rng(seed).normal(mean, sigma, size=n)
    gain = np.maximum(draws - best, 0.0)
    return gain.mean(), gain.std(ddof=1) / math.sqrt(n)


def test_ei_at_the_incumbent_with_unit_sigma():
    assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-15)
    assert expected_improvement(3.0, 1.0, 3.0) == pytest.approx(0.39894, abs=1e-5)


def test_ei_degenerate_branch_is_exact():
    assert expected_improvement(-1.0, 0.0, 0.0) == 0.0
    assert expected_improvement(2.5, 0.0, 1.0) == 1.5
    assert expected_improvement(2.5, 1e-30, 1.0) == 1.5
    # negative round-off variance is treated as zero
    assert expected_improvement(0.5, -1e-18, 0.0) == 0.5


@pytest.mark.parametrize("seed", range(10))
def test_ei_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    mean, sigma, best = rng.normal(), rng.uniform(0.1, 2.0), rng.normal()
    mc, se = monte_carlo_ei(mean, sigma, best, seed=seed + 1000)
    assert abs(expected_improvement(mean, sigma**2, best) - mc) < 3 * se


def test_ei_vectorizes():
    means = np.array([0.0, 1.0, -1.0])
    out = expected_improvement(means, np.array([1.0, 0.0, 4.0]), 0.0)
    assert out.shape == (3,)
    assert out[1] == 1.0
    assert out[0] == pytest.approx(expected_improvement(0.0, 1.0, 0.0))


@given(st.floats(-10, 10), st.floats(0.0, 10.0), st.floats(-10, 10))
def test_ei_nonnegative_and_finite(mean, var, best):
    ei = expected_improvement(mean, var, best)
    assert ei >= 0.0 and math.isfinite(ei)


@given(st.floats(-5, 5), st.floats(0.01, 5.0), st.floats(-5, 5))
def test_ei_nondecreasing_in_mean(best, var, mean):
    grid = mean + np.linspace(0.0, 3.0, 31)
    ei = expected_improvement(grid, var, best)
    assert np.all(np.diff(ei) >= -1e-12)


@given(st.floats(-5, 5), st.floats(0.0, 5.0))
def test_ei_nondecreasing_in_sigma_below_incumbent(best, gap):
    mean = best - gap
    sigmas = np.linspace(0.0, 4.0, 41)
    ei = expected_improvement(mean, sigmas**2, best)
    assert np.all(np.diff(ei) >= -1e-12)


# ---------------------------------------------------------------- selection


def test_tie_broken_by_variance():
    scores = [AcquisitionScore(0, 0.1, 0, 1), AcquisitionScore(1, 0.5, 0, 1),
              AcquisitionScore(2, 0.5, 0, 2), AcquisitionScore(3, 0.3, 0, 1)]
    assert select_next(scores) == 2


def test_single_candidate():
    assert select_next([AcquisitionScore(17, 0.0, 0.0, 0.0)]) == 17


def test_all_zero_ei_picks_lowest_index_of_highest_variance():
    scores = [AcquisitionScore(i, 0.0, 0.0, v) for i, v in [(9, 1.0), (4, 2.0), (6, 2.0), (1, 0.5)]]
    assert select_next(scores) == 4


def test_empty_pool():
    with pytest.raises(EmptyPool):
        select_next([])
    with pytest.raises(EmptyPool):
        select_from_arrays([], [], [])


@given(st.lists(st.tuples(st.integers(-16, 16), st.floats(0, 1)), min_size=1, max_size=30),
       st.integers(-100, 100))
def test_selection_invariant_to_common_shift(pairs, shift):
    # dyadic means and integer shifts keep mean - best exact, so EI is unchanged bit for bit
    means = np.array([p[0] / 8 for p in pairs])
    var = np.array([p[1] for p in pairs])
    idx = np.arange(len(pairs)) * 3
    a = select_from_arrays(idx, expected_improvement(means, var, 0.5), var)
    b = select_from_arrays(idx, expected_improvement(means + shift, var, 0.5 + shift), var)
    assert a == b


# ---------------------------------------------------------------- pool scoring


def _state():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3))
    return build_state(x, np.sin(x[:, 0]), KernelParams.create(lengthscale=1.2)), rng


def test_score_pool_totality_and_composition():
    state, rng = _state()
    inputs = rng.normal(size=(11, 3))
    cands = np.arange(100, 111)
    scores = score_pool(state, cands, inputs, 0.3)
    assert [s.candidate_index for s in scores] == list(cands)
    for s, row in zip(scores, inputs):
        mean, var = posterior(state, row)
        assert s.mean == pytest.approx(mean, abs=1e-12)
        assert s.variance == pytest.approx(var, abs=1e-12)
        assert s.ei == pytest.approx(expected_improvement(mean, var, 0.3), abs=1e-12)


def test_identical_candidates_score_identically():
    state, _ = _state()
    inputs = np.tile([0.3, -0.1, 2.0], (5, 1))
    scores = score_pool(state, range(5), inputs, 0.0)
    assert len({(s.ei, s.mean, s.variance) for s in scores}) == 1


def test_score_arrays_matches_score_pool():
    state, rng = _state()
    inputs = rng.normal(size=(4, 3))
    ei, mean, var = score_arrays(state, inputs, 0.1)
    scores = score_pool(state, range(4), inputs, 0.1)
    assert np.array_equal(ei, [s.ei for s in scores])
