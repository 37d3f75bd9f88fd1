import heapq

import numpy as np
import pytest

from routefield.kernel import (
    DemandAtom,
    IncompletePolicyError,
    Policy,
    Scenario,
    TimeGrid,
    enumerate_pure_paths,
    free_flow_ticks,
    path_policy,
)
from routefield.mfg import (
    DEFAULT_OMD_SCHEDULE,
    OmdSchedule,
    best_response,
    exploitability,
    forward_flow,
    mean_travel_time,
    omd_solve,
    path_distribution,
    policy_values,
    q_values,
    walk_path,
)
from routefield.network import augment_od, build_network, constant
from routefield.scenarios import (
    augmented_braess_scenario,
    braess_scenario,
    pigou_scenario,
)


@pytest.fixture(scope="module")
def pigou5():
    return pigou_scenario("classic", dt=0.01, horizon=5.0)


@pytest.fixture(scope="module")
def braess():
    return braess_scenario()


def test_forward_flow_pigou_even_split(pigou5):
    pol = Policy.uniform(pigou5)
    flow = forward_flow(pol, pigou5)
    flow.validate()
    # both road links carry half the population during transit
    assert flow.nu[50, 0] == pytest.approx(0.5, abs=1e-12)
    assert flow.nu[50, 1] == pytest.approx(0.5, abs=1e-12)


def test_forward_flow_dirac_absorption_tick(pigou5):
    pol = path_policy(pigou5, (2, 0, 3))
    flow = forward_flow(pol, pigou5)
    # 1 origin tick + 200 ticks on the flat link -> absorbed at tick 201
    absorbed = flow.absorbed(0)
    assert absorbed[200] == pytest.approx(0.0)
    assert absorbed[201] == pytest.approx(1.0)


def test_forward_flow_braess_equilibrium_absorption(braess):
    pol, _ = omd_solve(braess)
    flow = forward_flow(pol, braess)
    absorbed = flow.absorbed(0)
    # all mass arrives 75 travel ticks after leaving the origin (tick 76)
    assert absorbed[76] == pytest.approx(1.0, abs=1e-9)
    assert absorbed[75] < 1e-9


def test_forward_flow_mass_conservation_every_tick(braess):
    pol = Policy.uniform(braess)
    flow = forward_flow(pol, braess)
    for layer in flow.layers:
        totals = layer.sum(axis=(1, 2))
        assert np.abs(totals - 1.0).max() <= 1e-9


def test_forward_flow_incomplete_policy(braess):
    pol = Policy.uniform(braess)
    pol.table[10, 0, 0, :] = 0.0  # kill a reachable decision row
    with pytest.raises(IncompletePolicyError):
        forward_flow(pol, braess)


def test_best_response_tie_prefers_lower_link(pigou5):
    pol = Policy.uniform(pigou5)
    flow = forward_flow(pol, pigou5)  # both links cost 2 at the even split
    br, values = best_response(flow, pigou5)
    atom = pigou5.atoms[0]
    row = br.probs(atom.departure_tick, atom.origin, atom.destination)
    assert row.tolist() == [1.0, 0.0]
    # path cost 2.0 plus the single origin-link tick
    assert values[0] == pytest.approx(2.0 + pigou5.grid.dt, abs=1e-12)


def test_best_response_prefers_empty_link(pigou5):
    pol = path_policy(pigou5, (2, 0, 3))  # everyone on the flat link
    flow = forward_flow(pol, pigou5)
    br, values = best_response(flow, pigou5)
    atom = pigou5.atoms[0]
    row = br.probs(atom.departure_tick, atom.origin, atom.destination)
    assert row.tolist() == [0.0, 1.0]
    assert values[0] == pytest.approx(1.0, abs=3 * pigou5.grid.dt)


def _dijkstra_free_flow(scenario, origin, destination):
    """Independent shortest-path oracle on the tick-quantized free-flow
    weights (arrival tick at the destination, departures at tick 0)."""
    grid, network = scenario.grid, scenario.network
    start_tick = 1  # leaves the origin link after its single tick
    dist = {origin: start_tick}
    heap = [(start_tick, origin)]
    while heap:
        t, link = heapq.heappop(heap)
        if link == destination:
            return t
        if t > dist.get(link, 1 << 30):
            continue
        for nxt in network.successors(link):
            t2 = t if nxt == destination else t + free_flow_ticks(network, nxt, grid)
            if t2 < dist.get(nxt, 1 << 30):
                dist[nxt] = t2
                heapq.heappush(heap, (t2, nxt))
    return None


def test_best_response_matches_dijkstra_on_constant_network():
    net = build_network([
        (1, 2, constant(0.7)), (1, 3, constant(0.3)), (2, 4, constant(0.4)),
        (3, 4, constant(1.1)), (2, 3, constant(0.2)), (3, 2, constant(0.35)),
    ])
    net = augment_od(net, [1], [4], origin_travel_time=0.1)
    grid = TimeGrid(0.1, 6.0)
    atoms = (DemandAtom(net.origin_link(1), net.destination_link(4), 0, 1.0),)
    sc = Scenario(net, grid, atoms)
    pol = Policy.uniform(sc)
    flow = forward_flow(pol, sc)
    _, values = best_response(flow, sc)
    arrival_tick = _dijkstra_free_flow(sc, atoms[0].origin, atoms[0].destination)
    assert values[0] == pytest.approx(arrival_tick * grid.dt, abs=1e-12)


def test_exploitability_zero_at_even_split(pigou5):
    pol = Policy.uniform(pigou5)
    assert exploitability(pol, pigou5) == pytest.approx(0.0, abs=1e-12)


def test_exploitability_dirac_on_loaded_link(pigou5):
    pol = path_policy(pigou5, (2, 1, 3))  # all mass on the 1 + 2x link
    val = exploitability(pol, pigou5)
    assert val == pytest.approx(1.0, abs=2 * pigou5.grid.dt)


def test_exploitability_nonnegative_for_assorted_policies(braess):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        pol = Policy.uniform(braess)
        noisy = rng.random(pol.table.shape) * pol.table
        with np.errstate(invalid="ignore"):
            pol.table = noisy / noisy.sum(axis=-1, keepdims=True)
        pol.table = np.nan_to_num(pol.table, nan=0.0)
        assert exploitability(pol, braess) >= 0.0


def test_policy_value_matches_flow_accounting(braess):
    pol = Policy.uniform(braess)
    flow = forward_flow(pol, braess)
    j_eval = policy_values(flow, pol)[0]
    absorbed = flow.absorbed(0)
    j_flow = braess.grid.dt * float(np.sum(1.0 - absorbed))
    assert j_eval == pytest.approx(j_flow, abs=1e-9)


def test_value_bounds(braess):
    pol = Policy.uniform(braess)
    flow = forward_flow(pol, braess)
    for j in policy_values(flow, pol):
        assert 0.0 <= j <= braess.grid.horizon + 1e-12
    qs = q_values(flow, pol)
    for q in qs.values():
        vals = q[~np.isnan(q)]
        assert np.all(vals >= 0.0)
        assert np.all(vals <= braess.grid.horizon + 1e-12)


def test_br_dominates_sampled_path_policies(braess):
    pol, _ = omd_solve(braess, OmdSchedule(((20, 1.0),)))
    flow = forward_flow(pol, braess)
    _, br_values = best_response(flow, braess)
    atom = braess.atoms[0]
    paths = enumerate_pure_paths(braess.network, atom.origin, atom.destination,
                                 braess.grid.n_ticks, braess.grid)
    rng = np.random.default_rng(0)
    for _ in range(20):
        path = paths[rng.integers(len(paths))]
        pure = path_policy(braess, path)
        j_pure = policy_values(flow, pure)[0]
        assert br_values[0] <= j_pure + 1e-9


def test_omd_pigou_converges_to_even_split(pigou5):
    pol, hist = omd_solve(pigou5, DEFAULT_OMD_SCHEDULE)
    atom = pigou5.atoms[0]
    row = pol.probs(atom.departure_tick, atom.origin, atom.destination)
    assert abs(row[1] - 0.5) < 0.01
    assert hist[-1].exploitability < 0.01
    assert len(hist) == 100


def test_omd_braess_equalizes_paths(braess):
    pol, hist = omd_solve(braess)
    flow = forward_flow(pol, braess)
    atom = braess.atoms[0]
    dist = path_distribution(pol, flow, atom, min_prob=1e-2)
    assert len(dist) == 3
    for _, prob, travel in dist:
        assert prob > 0.01
        assert travel == pytest.approx(3.75, abs=0.05)


def test_omd_zero_iterations_rejected(braess):
    with pytest.raises(ValueError):
        omd_solve(braess, OmdSchedule(()))


def test_omd_population_scale_invariance(braess):
    small = braess_scenario(n0=100)
    large = braess_scenario(n0=14000)
    pol_s, hist_s = omd_solve(small, OmdSchedule(((15, 1.0),)))
    pol_l, hist_l = omd_solve(large, OmdSchedule(((15, 1.0),)))
    assert np.array_equal(pol_s.table, pol_l.table)
    assert [h.exploitability for h in hist_s] == [h.exploitability for h in hist_l]
    assert np.array_equal(forward_flow(pol_s, small).nu, forward_flow(pol_l, large).nu)


def test_wardrop_property_on_converged_policies():
    sc = augmented_braess_scenario()
    pol, hist = omd_solve(sc)
    eps = hist[-1].exploitability
    assert eps < 0.05
    flow = forward_flow(pol, sc)
    for atom in sc.atoms:
        costs = [travel for _, prob, travel in
                 path_distribution(pol, flow, atom, min_prob=1e-2)
                 if travel is not None]
        assert costs
        assert max(costs) - min(costs) <= eps + 2 * sc.grid.dt


def test_walk_path_matches_distribution(braess):
    pol, _ = omd_solve(braess, OmdSchedule(((30, 1.0),)))
    flow = forward_flow(pol, braess)
    atom = braess.atoms[0]
    for path, _, travel in path_distribution(pol, flow, atom, min_prob=1e-2):
        assert walk_path(flow, path, atom.departure_tick) == pytest.approx(travel)


def test_mean_travel_time_subtracts_origin(braess):
    pol, hist = omd_solve(braess, OmdSchedule(((40, 1.0),)))
    flow = forward_flow(pol, braess)
    j = policy_values(flow, pol)
    assert mean_travel_time(braess, j) == pytest.approx(j[0] - braess.grid.dt)
