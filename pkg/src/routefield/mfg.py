"""Mean-field solver: forward distribution propagation, best-response
backward induction, exploitability, and online mirror descent.

The population is a probability distribution over agent states, advanced
tick by tick.  A representative agent's best response against the frozen
per-tick link proportions is a finite-horizon dynamic program on the
time-expanded graph, which also yields state-action values for the mirror
descent update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernel import (
    AgentState,
    DemandAtom,
    Policy,
    Scenario,
    travel_ticks,
)
from .network import congestion_times

#: Exploitability below this (negative) floor indicates a real bug rather
#: than float roundoff.
NEGATIVE_EXPLOITABILITY_FLOOR = -1e-6


@dataclass(frozen=True)
class OmdSchedule:
    """Piecewise-constant learning-rate schedule: (iterations, rate) runs."""

    segments: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if any(n <= 0 or lr <= 0 for n, lr in self.segments):
            raise ValueError("schedule entries need positive counts and rates")

    @property
    def total_iterations(self) -> int:
        return sum(n for n, _ in self.segments)


DEFAULT_OMD_SCHEDULE = OmdSchedule(((30, 1.0), (30, 0.1), (40, 0.01)))


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    learning_rate: float
    exploitability: float
    mean_travel_time: float


class DistributionFlow:
    """Tick-indexed population distribution over agent states.

    ``nu[t, link]`` is the proportion of the whole population on a link;
    per-atom occupancy layers (each normalized to the atom's unit mass)
    keep origin/destination/departure classes separable for per-atom costs
    and the travel-time-equalization checks.
    """

    def __init__(self, scenario: Scenario):
        grid, network = scenario.grid, scenario.network
        self.scenario = scenario
        self.n_ticks = grid.n_ticks
        self.max_wait = grid.n_ticks  # stored waiting never needs to exceed this
        self.nu = np.zeros((self.n_ticks, network.n_links))
        self.layers = [
            np.zeros((self.n_ticks, network.n_links, self.max_wait + 1))
            for _ in scenario.atoms
        ]

    def link_proportion(self, tick: int, link: int) -> float:
        return float(self.nu[tick, link])

    def mass(self, tick: int, state: AgentState) -> float:
        total = 0.0
        for atom, layer in zip(self.scenario.atoms, self.layers):
            if atom.destination == state.destination:
                total += atom.mass * layer[tick, state.link, state.waiting]
        return total

    def absorbed(self, atom_index: int) -> np.ndarray:
        """Absorbed fraction of one atom at each tick."""
        atom = self.scenario.atoms[atom_index]
        return self.layers[atom_index][:, atom.destination, 0].copy()

    def validate(self, tol: float = 1e-9) -> None:
        for i, layer in enumerate(self.layers):
            totals = layer.sum(axis=(1, 2))
            worst = float(np.abs(totals - 1.0).max()) if len(totals) else 0.0
            if worst > tol:
                raise AssertionError(f"atom {i} mass drifts by {worst}")
        weights = np.array([a.mass for a in self.scenario.atoms])
        nu_ref = sum(
            w * layer.sum(axis=2) for w, layer in zip(weights, self.layers)
        )
        if float(np.abs(self.nu - nu_ref).max()) > tol:
            raise AssertionError("link proportions inconsistent with state mass")


def _policy_matrices(policy: Policy, destination: int) -> np.ndarray:
    """Dense per-tick transition matrices row=link, col=successor."""
    network, grid = policy.network, policy.grid
    di = policy.dest_index(destination)
    mats = np.zeros((grid.n_ticks, network.n_links, network.n_links))
    for link in range(network.n_links):
        succ = network.successors(link)
        if succ:
            mats[:, link, list(succ)] = policy.table[:, link, di, : len(succ)]
    return mats


def forward_flow(policy: Policy, scenario: Scenario) -> DistributionFlow:
    """Propagate the initial demand distribution through the tick dynamics.

    Per tick: waiting mass shifts down one tick; decision mass splits over
    successors; the new link proportions are computed after all arrivals;
    arriving mass is assigned the congested travel time of its new link,
    or absorbed if the link is its destination.
    """
    grid, network = scenario.grid, scenario.network
    flow = DistributionFlow(scenario)
    n_ticks, n_links = flow.n_ticks, network.n_links
    mats = {d: _policy_matrices(policy, d) for d in scenario.destinations}
    _check_rows(policy, scenario)

    for layer, atom in zip(flow.layers, scenario.atoms):
        layer[0, atom.origin, atom.departure_tick] = 1.0
    flow.nu[0] = sum(
        atom.mass * layer[0].sum(axis=1)
        for atom, layer in zip(scenario.atoms, flow.layers)
    )

    staged: list[tuple[np.ndarray, np.ndarray]] = []
    for t in range(n_ticks - 1):
        nu_next = np.zeros(n_links)
        staged.clear()
        for atom, layer in zip(scenario.atoms, flow.layers):
            cur = layer[t]
            nxt = layer[t + 1]
            nxt[:, : flow.max_wait] += cur[:, 1:]
            nxt[atom.destination, 0] += cur[atom.destination, 0]  # absorbed stays
            movers = cur[:, 0].copy()
            movers[atom.destination] = 0.0
            arrivals = movers @ mats[atom.destination][t]
            staged.append((nxt, arrivals))
            nu_next += atom.mass * (nxt.sum(axis=1) + arrivals)
        flow.nu[t + 1] = nu_next
        for atom, (nxt, arrivals) in zip(scenario.atoms, staged):
            for link in np.nonzero(arrivals)[0]:
                m = arrivals[link]
                if link == atom.destination:
                    nxt[link, 0] += m
                else:
                    w = travel_ticks(network.links[link].congestion, nu_next[link], grid)
                    nxt[link, min(w - 1, flow.max_wait)] += m
    return flow


def _check_rows(policy: Policy, scenario: Scenario) -> None:
    di = [policy.dest_index(d) for d in scenario.destinations]
    k = policy._succ_len
    decide = k > 0
    sums = policy.table[:, decide][..., di, :].sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= 1e-9):
        from .kernel import IncompletePolicyError

        raise IncompletePolicyError("policy has rows that do not sum to 1")


def _waits_table(flow: DistributionFlow) -> np.ndarray:
    """Congested travel times on every link at every tick, in ticks."""
    scenario = flow.scenario
    grid, network = scenario.grid, scenario.network
    waits = np.ones((grid.n_ticks, network.n_links), dtype=np.int64)
    for link in network.links:
        times = congestion_times(link.congestion, flow.nu[:, link.id])
        waits[:, link.id] = np.maximum(1, np.ceil(times / grid.dt - 1e-9).astype(np.int64))
    return waits


class _Backward:
    """Backward induction over the time-expanded graph on a frozen flow.

    ``decision[t, link]`` is the expected remaining cost standing at a
    zero-waiting state; ``on_arrival[t, link]`` the remaining cost upon
    arriving at a link at tick ``t`` (waiting included, horizon-truncated).
    With ``policy`` the sweep evaluates it; without, it minimizes.
    """

    def __init__(self, flow: DistributionFlow, destination: int,
                 policy: Policy | None, waits: np.ndarray | None = None):
        scenario = flow.scenario
        grid, network = scenario.grid, scenario.network
        n_ticks, n_links = grid.n_ticks, network.n_links
        dt = grid.dt
        if waits is None:
            waits = _waits_table(flow)
        succs = [network.successors(l) for l in range(n_links)]
        width = max((len(s) for s in succs), default=1)
        succ_pad = np.zeros((n_links, width), dtype=np.int64)
        valid = np.zeros((n_links, width), dtype=bool)
        for link, s in enumerate(succs):
            succ_pad[link, : len(s)] = s
            valid[link, : len(s)] = True
        has_succ = valid.any(axis=1)
        stuck = ~has_succ  # dead ends pay the remaining horizon

        self.decision = np.zeros((n_ticks + 1, n_links))
        self.on_arrival = np.zeros((n_ticks + 1, n_links))
        self.q = np.full((n_ticks, n_links, width), np.nan)
        self.argmin = np.zeros((n_ticks, n_links), dtype=np.int64)
        di = policy.dest_index(destination) if policy is not None else None
        rows = np.arange(n_links)

        for t in range(n_ticks - 1, -1, -1):
            av_next = self.on_arrival[t + 1]  # already 0 at the destination
            qt = dt + av_next[succ_pad]
            q_inf = np.where(valid, qt, np.inf)
            self.argmin[t] = q_inf.argmin(axis=1)
            if policy is None:
                dec = q_inf[rows, self.argmin[t]]
            else:
                probs = policy.table[t, :, di, :width]
                dec = np.where(valid, probs * np.where(valid, qt, 0.0), 0.0).sum(axis=1)
            dec = np.where(stuck, (n_ticks - t) * dt, dec)
            dec[destination] = 0.0
            self.decision[t] = dec
            self.q[t] = np.where(valid, qt, np.nan)

            w = waits[t]
            decide_at = t + w - 1
            future = self.decision[np.minimum(decide_at, n_ticks), rows]
            arr = np.where(decide_at >= n_ticks, (n_ticks - t) * dt, (w - 1) * dt + future)
            arr[destination] = 0.0
            self.on_arrival[t] = arr

    def initial_value(self, atom: DemandAtom, grid) -> float:
        return float(
            atom.departure_tick * grid.dt
            + self.decision[atom.departure_tick, atom.origin]
        )


def best_response(flow: DistributionFlow, scenario: Scenario,
                  waits: np.ndarray | None = None) -> tuple[Policy, list[float]]:
    """Pure best-response policy against a frozen flow, plus its value at
    each demand atom's initial state.  Ties go to the lowest link id."""
    if waits is None:
        waits = _waits_table(flow)
    br = Policy(scenario.network, scenario.grid, scenario.destinations)
    sweeps = {d: _Backward(flow, d, None, waits) for d in scenario.destinations}
    for d, sweep in sweeps.items():
        di = br.dest_index(d)
        for link in range(scenario.network.n_links):
            k = len(scenario.network.successors(link))
            if k == 0:
                continue
            rows = np.zeros((scenario.grid.n_ticks, k))
            rows[np.arange(scenario.grid.n_ticks), sweep.argmin[:, link]] = 1.0
            br.table[:, link, di, :k] = rows
    values = [sweeps[a.destination].initial_value(a, scenario.grid)
              for a in scenario.atoms]
    return br, values


def policy_values(flow: DistributionFlow, policy: Policy,
                  waits: np.ndarray | None = None) -> list[float]:
    """Expected cost of following ``policy`` in its own frozen flow, per atom."""
    scenario = flow.scenario
    if waits is None:
        waits = _waits_table(flow)
    sweeps = {d: _Backward(flow, d, policy, waits) for d in scenario.destinations}
    return [sweeps[a.destination].initial_value(a, scenario.grid) for a in scenario.atoms]


def exploitability(policy: Policy, scenario: Scenario,
                   flow: DistributionFlow | None = None) -> float:
    """Mass-weighted gap between the policy's cost and the best-response
    cost against the flow the policy itself induces.  Zero at equilibrium."""
    if flow is None:
        flow = forward_flow(policy, scenario)
    j_pol = policy_values(flow, policy)
    _, j_br = best_response(flow, scenario)
    gap = sum(a.mass * (jp - jb) for a, jp, jb in zip(scenario.atoms, j_pol, j_br))
    if gap < NEGATIVE_EXPLOITABILITY_FLOOR:
        raise RuntimeError(f"exploitability {gap} below roundoff floor")
    return max(gap, 0.0)


def mean_travel_time(scenario: Scenario, atom_costs: Sequence[float]) -> float:
    """Mass-weighted travel time: cost minus departure delay and the
    one-tick origin link traversal."""
    dt = scenario.grid.dt
    return sum(
        a.mass * (c - (a.departure_tick + 1) * dt)
        for a, c in zip(scenario.atoms, atom_costs)
    )


def q_values(flow: DistributionFlow, policy: Policy,
             waits: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """State-action values Q(t, link, a) of taking ``a`` then following
    ``policy`` in the frozen flow, one array per destination."""
    if waits is None:
        waits = _waits_table(flow)
    return {d: _Backward(flow, d, policy, waits).q for d in flow.scenario.destinations}


IterationCallback = Callable[[int, float, Policy, DistributionFlow, float], None]


def omd_solve(
    scenario: Scenario,
    schedule: OmdSchedule = DEFAULT_OMD_SCHEDULE,
    callback: IterationCallback | None = None,
) -> tuple[Policy, list[HistoryRow]]:
    """Online mirror descent to a mean-field equilibrium.

    Accumulates learning-rate-weighted state-action values in a dual table
    and plays the softmax of its negation; the zero-initialized dual table
    makes the first policy uniform.  History rows carry the exploitability
    and mean travel time of the policy after each update.
    """
    if not schedule.segments:
        raise ValueError("empty mirror descent schedule")
    policy = Policy.uniform(scenario)
    dual = np.zeros_like(policy.table)
    history: list[HistoryRow] = []
    flow = forward_flow(policy, scenario)
    waits = _waits_table(flow)
    sweeps = {d: _Backward(flow, d, policy, waits) for d in scenario.destinations}
    iteration = 0
    for count, lr in schedule.segments:
        for _ in range(count):
            iteration += 1
            for d, sweep in sweeps.items():
                di = policy.dest_index(d)
                q = sweep.q
                dual[:, :, di, : q.shape[2]] += lr * np.nan_to_num(q, nan=0.0)
            _softmax_policy(policy, dual)
            flow = forward_flow(policy, scenario)
            waits = _waits_table(flow)
            sweeps = {d: _Backward(flow, d, policy, waits)
                      for d in scenario.destinations}
            j_pol = [sweeps[a.destination].initial_value(a, scenario.grid)
                     for a in scenario.atoms]
            _, j_br = best_response(flow, scenario, waits)
            gap = sum(a.mass * (jp - jb)
                      for a, jp, jb in zip(scenario.atoms, j_pol, j_br))
            expl = max(gap, 0.0)
            history.append(HistoryRow(iteration, lr, expl,
                                      mean_travel_time(scenario, j_pol)))
            if callback is not None:
                callback(iteration, lr, policy, flow, expl)
    return policy, history


def _softmax_policy(policy: Policy, dual: np.ndarray) -> None:
    for link in range(policy.network.n_links):
        k = len(policy.network.successors(link))
        if k == 0:
            continue
        y = dual[:, link, :, :k]
        z = np.exp(-(y - y.min(axis=-1, keepdims=True)))
        policy.table[:, link, :, :k] = z / z.sum(axis=-1, keepdims=True)


def walk_path(flow: DistributionFlow, path: Sequence[int],
              departure_tick: int) -> float | None:
    """Travel time realized by following ``path`` through a frozen flow,
    measured from the end of the origin link; None if the horizon cuts the
    trip off."""
    scenario = flow.scenario
    grid, network = scenario.grid, scenario.network
    t = departure_tick  # decision tick on the origin link
    destination = path[-1]
    for link in path[1:]:
        t_arr = t + 1
        if t_arr > grid.n_ticks:
            return None
        if link == destination:
            return (t_arr - departure_tick - 1) * grid.dt
        if t_arr >= grid.n_ticks:
            return None
        w = travel_ticks(network.links[link].congestion, flow.nu[t_arr, link], grid)
        t = t_arr + w - 1
    raise ValueError("path does not end at its destination link")


def path_distribution(
    policy: Policy,
    flow: DistributionFlow,
    atom: DemandAtom,
    min_prob: float = 1e-6,
) -> list[tuple[tuple[int, ...], float, float | None]]:
    """Paths the atom's mass realizes under the policy in its own flow.

    Returns (path, probability, travel_time) triples for every branch with
    probability above ``min_prob``; travel_time is None for branches the
    horizon truncates.  Probabilities below the threshold are dropped, so
    the returned masses can sum to slightly less than one.
    """
    scenario = flow.scenario
    grid, network = scenario.grid, scenario.network
    out: list[tuple[tuple[int, ...], float, float | None]] = []

    def walk(t: int, link: int, prob: float, path: tuple[int, ...]) -> None:
        if len(path) > network.n_links:  # cycle guard
            return
        row = policy.probs(t, link, atom.destination)
        succ = network.successors(link)
        for p, nxt in zip(row, succ):
            branch = prob * float(p)
            if branch < min_prob:
                continue
            t_arr = t + 1
            if nxt == atom.destination:
                out.append((path + (nxt,),
                            branch,
                            (t_arr - atom.departure_tick - 1) * grid.dt))
                continue
            if t_arr >= grid.n_ticks:
                out.append((path + (nxt,), branch, None))
                continue
            w = travel_ticks(network.links[nxt].congestion, flow.nu[t_arr, nxt], grid)
            decide_at = t_arr + w - 1
            if decide_at >= grid.n_ticks:
                out.append((path + (nxt,), branch, None))
            else:
                walk(decide_at, nxt, branch, path + (nxt,))

    walk(atom.departure_tick, atom.origin, 1.0, (atom.origin,))
    return out
