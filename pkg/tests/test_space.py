import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from promptbo.errors import AlreadyConsumed, ConfigError, OutOfRange
from promptbo.space import (
    CandidatePool,
    HyperparamConfig,
    SearchSpace,
    default_lora_space,
    enumerate_space,
)

SPACE = default_lora_space()


def test_default_axis_cardinalities():
    assert SPACE.shape == (9, 9, 8, 10, 7)
    assert SPACE.size == 45_360 == len(SPACE)


def test_default_axis_values():
    rank, mult, batch, lr, dropout = (a.values for a in SPACE.axes)
    assert rank == tuple(2**k for k in range(9))
    assert mult == tuple(2.0**k for k in range(-1, 8))
    assert batch == tuple(2**k for k in range(1, 9))
    assert lr[0] == 1e-6 and lr[-1] == 5e-3 and len(lr) == 10
    assert dropout == (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


def test_first_index_is_lexicographic_minimum():
    assert SPACE.config(0) == HyperparamConfig(1, 0.5, 2, 1e-6, 0.0)


def test_last_index():
    assert SPACE.config(SPACE.size - 1) == HyperparamConfig(256, 128.0, 256, 5e-3, 0.3)


def test_toy_enumeration():
    toy = SearchSpace([("a", [1, 2]), ("b", [3])])
    assert list(enumerate_space(toy)) == [(1, 3), (2, 3)]


def test_enumeration_matches_itertools_order_exhaustively():
    expected = itertools.product(*(a.values for a in SPACE.axes))
    for i, point in enumerate(expected):
        assert SPACE.point(i) == point
    assert i == SPACE.size - 1


def test_bijection_exhaustive():
    for i in range(SPACE.size):
        assert SPACE.index_of(SPACE.point(i)) == i


def test_index_of_accepts_configs_and_mappings():
    cfg = HyperparamConfig(8, 2.0, 32, 2e-5, 0.0)
    i = SPACE.index_of(cfg)
    assert SPACE.config(i) == cfg
    assert SPACE.index_of(cfg.as_dict()) == i
    assert SPACE.index_of({"rank": 8, "alpha": 16, "batch_size": 32, "learning_rate": 2e-5, "dropout": 0.0}) == i


def test_alpha_is_exact():
    for i in range(0, SPACE.size, 97):
        c = SPACE.config(i)
        assert c.alpha == c.alpha_multiplier * c.rank
        assert float(c.alpha).is_integer() or c.rank == 1


def test_off_grid_rejected():
    with pytest.raises(OutOfRange):
        SPACE.index_of((3, 1.0, 2, 1e-6, 0.0))
    assert not SPACE.contains((3, 1.0, 2, 1e-6, 0.0))


@pytest.mark.parametrize("axes", [
    [("a", [])],
    [("a", [2, 1])],
    [("a", [1, 1])],
])
def test_bad_axes_rejected(axes):
    with pytest.raises(ConfigError):
        SearchSpace(axes)


def test_json_round_trip():
    assert SearchSpace.from_json(SPACE.to_json()) == SPACE


def test_take_twice_raises():
    pool = CandidatePool(SPACE)
    pool.take(5)
    with pytest.raises(AlreadyConsumed):
        pool.take(5)


def test_take_out_of_range():
    pool = CandidatePool(SPACE)
    with pytest.raises(OutOfRange):
        pool.take(50_000)
    with pytest.raises(OutOfRange):
        pool.take(-1)


def test_thirty_takes():
    pool = CandidatePool(SPACE)
    rng = np.random.default_rng(0)
    for i in rng.choice(SPACE.size, 30, replace=False):
        cfg = pool.take(int(i))
        assert cfg == SPACE.config(int(i))
    assert pool.n_remaining == 45_330
    assert len(pool.consumed) == 30


@given(st.lists(st.integers(0, 63), max_size=80))
def test_pool_conservation(indices):
    toy = SearchSpace([("a", list(range(8))), ("b", list(range(8)))])
    pool = CandidatePool(toy)
    taken = set()
    for i in indices:
        if i in taken:
            with pytest.raises(AlreadyConsumed):
                pool.take(i)
        else:
            pool.take(i)
            taken.add(i)
        assert pool.n_remaining + len(pool.consumed) == toy.size
        remaining = set(pool.remaining().tolist())
        assert remaining.isdisjoint(pool.consumed)
        assert remaining | set(pool.consumed) == set(range(toy.size))


@given(st.integers(0, SPACE.size - 1))
def test_grid_membership(i):
    cfg = SPACE.config(i)
    for axis, v in zip(SPACE.axes, SPACE.point(i)):
        assert v in axis.values
    assert SPACE.contains(cfg)
