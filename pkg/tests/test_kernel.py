import numpy as np
import pytest

from routefield.kernel import (
    AgentState,
    Policy,
    TimeGrid,
    enumerate_pure_paths,
    mixture_policy,
    path_policy,
    sample_trajectory,
    travel_ticks,
)
from routefield.network import affine, constant
from routefield.scenarios import braess_scenario, pigou_scenario


@pytest.fixture(scope="module")
def pigou():
    return pigou_scenario("classic", dt=0.01, horizon=5.0)


@pytest.fixture(scope="module")
def braess():
    return braess_scenario()


def test_time_grid_tick_count():
    assert TimeGrid(0.01, 2.0).n_ticks == 200
    assert TimeGrid(0.5, 50.0).n_ticks == 100
    with pytest.raises(ValueError):
        TimeGrid(0.3, 1.0)  # not an integer number of ticks
    with pytest.raises(ValueError):
        TimeGrid(-0.1, 1.0)


def test_travel_ticks_examples():
    grid = TimeGrid(0.01, 2.0)
    assert travel_ticks(constant(2.0), 0.0, grid) == 200
    assert travel_ticks(affine(1.0, 2.0), 0.5, grid) == 200
    assert travel_ticks(constant(0.003), 0.9, grid) == 1  # minimum one tick


def test_travel_ticks_monotone_in_load():
    grid = TimeGrid(0.05, 5.0)
    fn = affine(1.0, 1.0)
    ticks = [travel_ticks(fn, mu, grid) for mu in np.linspace(0, 1, 50)]
    assert all(b >= a for a, b in zip(ticks, ticks[1:]))


def test_enumerate_pigou_paths(pigou):
    atom = pigou.atoms[0]
    paths = enumerate_pure_paths(pigou.network, atom.origin, atom.destination,
                                 pigou.grid.n_ticks, pigou.grid)
    assert paths == [(2, 0, 3), (2, 1, 3)]


def test_enumerate_braess_paths(braess):
    atom = braess.atoms[0]
    paths = enumerate_pure_paths(braess.network, atom.origin, atom.destination,
                                 braess.grid.n_ticks, braess.grid)
    assert len(paths) == 3
    assert paths == sorted(paths)  # lexicographic
    assert len(set(paths)) == 3    # duplicate-free
    for path in paths:
        for a, b in zip(path, path[1:]):
            assert b in braess.network.successors(a)


def test_enumerate_respects_tick_budget(braess):
    atom = braess.atoms[0]
    # the shortest route needs 1 (origin) + 20 (AB) + 40 (BD or via C) ticks
    paths = enumerate_pure_paths(braess.network, atom.origin, atom.destination,
                                 10, braess.grid)
    assert paths == []


def test_policy_rows_are_distributions(braess):
    pol = Policy.uniform(braess)
    for tick, link, dest, row in pol.decision_rows():
        assert row.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(row >= 0)


def test_policy_rejects_bad_row(braess):
    pol = Policy.uniform(braess)
    with pytest.raises(ValueError):
        pol.set_row(0, 0, braess.atoms[0].destination, [0.5])


def test_mixture_policy_marginals(braess):
    atom = braess.atoms[0]
    paths = enumerate_pure_paths(braess.network, atom.origin, atom.destination,
                                 braess.grid.n_ticks, braess.grid)
    pol = mixture_policy(braess, [(paths[0], 0.5), (paths[1], 0.25), (paths[2], 0.25)],
                         atom.destination)
    origin_row = pol.probs(0, atom.origin, atom.destination)
    assert origin_row.tolist() == pytest.approx([0.75, 0.25])


def test_sample_trajectory_deterministic(pigou):
    atom = pigou.atoms[0]
    pol = Policy.uniform(pigou)
    nu = np.zeros((pigou.grid.n_ticks, pigou.network.n_links))
    start = AgentState(atom.origin, atom.departure_tick, atom.destination)
    s1, c1 = sample_trajectory(pol, nu, start, pigou.grid, rng_seed=42)
    s2, c2 = sample_trajectory(pol, nu, start, pigou.grid, rng_seed=42)
    assert s1 == s2 and c1 == c2
    assert len(s1) == pigou.grid.n_ticks + 1


def test_sample_trajectory_pigou_flat_link_cost(pigou):
    atom = pigou.atoms[0]
    pol = path_policy(pigou, (2, 0, 3))
    nu = np.full((pigou.grid.n_ticks, pigou.network.n_links), 0.3)
    start = AgentState(atom.origin, atom.departure_tick, atom.destination)
    _, cost = sample_trajectory(pol, nu, start, pigou.grid, rng_seed=0)
    # origin tick + 200 ticks on the flat link
    assert cost == pytest.approx(2.0 + 2 * pigou.grid.dt, abs=2 * pigou.grid.dt)


def test_sample_trajectory_single_link_ticks():
    sc = pigou_scenario("classic", dt=0.1, horizon=5.0)
    atom = sc.atoms[0]
    pol = path_policy(sc, (2, 1, 3))
    nu = np.zeros((sc.grid.n_ticks, sc.network.n_links))  # free flow
    start = AgentState(atom.origin, atom.departure_tick, atom.destination)
    states, cost = sample_trajectory(pol, nu, start, sc.grid, rng_seed=1)
    ticks_on_link = travel_ticks(sc.network.links[1].congestion, 0.0, sc.grid)
    assert cost == pytest.approx((1 + ticks_on_link) * sc.grid.dt)
    assert states[1].link == 1  # on the road link right after the origin tick


def test_trajectory_absorbs_and_stays(pigou):
    atom = pigou.atoms[0]
    pol = path_policy(pigou, (2, 1, 3))
    nu = np.zeros((pigou.grid.n_ticks, pigou.network.n_links))
    start = AgentState(atom.origin, atom.departure_tick, atom.destination)
    states, cost = sample_trajectory(pol, nu, start, pigou.grid, rng_seed=1)
    arrival = round(cost / pigou.grid.dt)
    assert states[arrival].link == atom.destination
    assert all(s.link == atom.destination for s in states[arrival:])
