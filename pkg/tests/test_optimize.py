import pytest

from netsim.engine import EpisodeSpec, RewardWeights
from netsim.optimize import Objective, SearchSpace, exhaustive_search, local_search_optimize


@pytest.fixture(scope="module")
def spec(three_cell):
    return EpisodeSpec(three_cell, horizon_steps=1, mode="coverage")


@pytest.fixture(scope="module")
def objective(spec):
    return Objective(spec)


def test_grid_shape(spec):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 2)
    assert space.size == 343 and space.dims[0].values == (0, 2, 4, 6, 8, 10, 12)
    assert SearchSpace.grid(spec, "electrical_tilt", 0, 4, 2, scope="beam").size == 3 ** 24


def test_grid_rejects_bad_ranges(spec):
    with pytest.raises(ValueError):
        SearchSpace.grid(spec, "electrical_tilt", 0, 20, 2)
    with pytest.raises(ValueError):
        SearchSpace.grid(spec, "colour", 0, 1, 1)
    with pytest.raises(ValueError):
        SearchSpace.grid(spec, "electrical_tilt", 4, 2, 1)


def test_budget_one_evaluates_once(spec, objective):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 2)
    res = local_search_optimize(spec, 1, space, objective=objective)
    assert len(res.trace) == 1


def test_budget_counts_distinct_evaluations(spec, objective):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 2)
    res = local_search_optimize(spec, 40, space, seed=3, objective=objective)
    assert len(res.trace) == 40
    assert len({h for _, h, _ in res.trace}) == 40
    assert res.best_reward == max(r for _, _, r in res.trace)


def test_same_seed_same_trace(spec, objective):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 2)
    a = local_search_optimize(spec, 25, space, seed=7, objective=objective)
    b = local_search_optimize(spec, 25, space, seed=7, objective=objective)
    assert a.trace == b.trace


def test_budget_larger_than_space(spec, objective):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 2, 2)
    res = local_search_optimize(spec, 50, space, objective=objective)
    ex = exhaustive_search(spec, space, objective)
    assert len(res.trace) == 8 and res.best_reward == ex.best_reward


def test_best_action_reproduces_reward(spec, objective):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 4)
    res = local_search_optimize(spec, 10, space, objective=objective)
    assert objective(res.best_action) == res.best_reward


def test_invalid_budget(spec):
    with pytest.raises(ValueError):
        local_search_optimize(spec, 0, SearchSpace.grid(spec, "electrical_tilt", 0, 2, 2))


def test_weight_scaling_keeps_argmax(spec, three_cell):
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 6)
    a = exhaustive_search(spec, space)
    scaled = EpisodeSpec(three_cell, horizon_steps=1, mode="coverage", weights=RewardWeights().scaled(3.0))
    b = exhaustive_search(scaled, space)
    assert a.best_index == b.best_index
    assert b.best_reward == pytest.approx(3 * a.best_reward)
