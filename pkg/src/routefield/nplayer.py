"""Finite-player game engines and mean-field policy validation.

The event engine advances a continuous clock to the next waiting-time
expiry and moves all expiring vehicles as one batch; empirical link
proportions (always multiples of 1/N) drive the congestion times.  The
tick engine mirrors the mean-field forward recursion with N sampled
vehicles and exists for regret minimization and law-of-large-numbers
parity checks.

Deviation incentives are measured realization-by-realization: for each
draw of the opponents' behavior, the probe player's cost under the shared
policy is compared against the best pure path given that same draw
(common random numbers).  Averaged over draws this is the quantity whose
closed form exists on the two-link toy network, and it upper-bounds the
gap from any fixed alternative path.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel import (
    Policy,
    Scenario,
    enumerate_pure_paths,
    travel_ticks,
)
from .network import evaluate_congestion

EVENT_TIME_TOL = 1e-9


class LivelockError(RuntimeError):
    """Event loop exceeded its defensive budget (zero travel times?)."""


class SizeBudgetError(RuntimeError):
    """Combinatorial budget exceeded; fall back to Monte Carlo."""


@dataclass(frozen=True)
class PurePathStrategy:
    """Deterministic strategy: follow a fixed link path."""

    path: tuple[int, ...]


@dataclass(frozen=True)
class PlayerSetup:
    origin: int
    destination: int
    departure_time: float
    atom_index: int


@dataclass(frozen=True)
class DeviationEstimate:
    """Two readings of the incentive to deviate from the shared policy.

    ``mean`` conditions on each realization: the probe compares its cost
    against the best pure path given that same draw of everyone's
    randomness (this is the quantity with a closed form on the two-link
    network).  ``fixed_path_gap`` compares expected costs: policy cost
    minus the best single path's expected cost, the gap from the
    best-response *policy* restricted to fixed paths.  The realized gap
    dominates the fixed-path gap and both vanish as N grows.
    """

    mean: float
    half_width_95: float
    n_samples: int
    fixed_path_gap: float = 0.0
    fixed_path_half_width: float = 0.0
    per_path_values: dict[tuple[int, ...], float] = field(default_factory=dict)


def assign_players(scenario: Scenario, n_players: int) -> list[PlayerSetup]:
    """Split N players over the demand atoms by largest remainder."""
    if n_players < 1:
        raise ValueError("need at least one player")
    masses = [a.mass for a in scenario.atoms]
    raw = [m * n_players for m in masses]
    counts = [int(x) for x in raw]
    remainders = sorted(
        range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True
    )
    short = n_players - sum(counts)
    for i in remainders[:short]:
        counts[i] += 1
    players = []
    dt = scenario.grid.dt
    for atom, count in zip(scenario.atoms, counts):
        for _ in range(count):
            players.append(
                PlayerSetup(atom.origin, atom.destination,
                            atom.departure_tick * dt, atom_index=scenario.atoms.index(atom))
            )
    return players


def _origin_delay(scenario: Scenario, player: PlayerSetup) -> float:
    fn = scenario.network.links[player.origin].congestion
    return player.departure_time + evaluate_congestion(fn, 0.0)


def _next_link(strategy, position: int, tick: int, link: int, dest: int,
               rng: np.random.Generator | None) -> int:
    if isinstance(strategy, PurePathStrategy):
        if position + 1 >= len(strategy.path):
            raise LivelockError("pure path exhausted before reaching its destination")
        return strategy.path[position + 1]
    if rng is None:
        raise ValueError("policy strategies need a random stream")
    return strategy.sample(tick, link, dest, rng)


def simulate_event(
    scenario: Scenario,
    strategies: Sequence[object],
    players: Sequence[PlayerSetup] | None = None,
    rngs: Sequence[np.random.Generator | None] | None = None,
    rng_seed: int | None = 0,
) -> tuple[list[list[tuple[float, int]]], list[float]]:
    """Continuous-clock simulation of the batch-move dynamics.

    Returns per-player trajectories as (time, link) change points and
    per-player costs (arrival time at the destination link, or the
    horizon for vehicles still en route).  Deterministic given the
    per-player random streams.
    """
    grid, network = scenario.grid, scenario.network
    n = len(strategies)
    if players is None:
        players = assign_players(scenario, n)
    if len(players) != n:
        raise ValueError("one setup per strategy required")
    if rngs is None:
        root = np.random.SeedSequence(rng_seed)
        rngs = [np.random.default_rng(s) for s in root.spawn(n)]

    link = [p.origin for p in players]
    wait = [_origin_delay(scenario, p) for p in players]
    position = [0] * n  # index into a pure path
    cost = [grid.horizon] * n
    trajectories: list[list[tuple[float, int]]] = [[(0.0, p.origin)] for p in players]
    active = [i for i in range(n) if link[i] != players[i].destination]
    clock = 0.0
    events = 0
    budget = 10 * n * network.n_links  # impossible with positive travel times

    while active:
        step = min(wait[i] for i in active)
        if clock + step > grid.horizon + EVENT_TIME_TOL:
            break
        clock += step
        movers = []
        for i in active:
            wait[i] -= step
            if wait[i] <= EVENT_TIME_TOL:
                movers.append(i)
        tick = min(grid.n_ticks - 1, int(clock / grid.dt + 1e-9))
        for i in movers:
            nxt = _next_link(strategies[i], position[i], tick, link[i],
                             players[i].destination, rngs[i])
            position[i] += 1
            link[i] = nxt
            trajectories[i].append((clock, nxt))
        counts: dict[int, int] = {}
        for l in link:
            counts[l] = counts.get(l, 0) + 1
        still = []
        for i in active:
            if i not in movers:
                still.append(i)
                continue
            here = link[i]
            if here == players[i].destination:
                cost[i] = clock
            elif not network.successors(here):
                wait[i] = math.inf  # dead end: stuck until the horizon
                still.append(i)
            else:
                fn = network.links[here].congestion
                wait[i] = evaluate_congestion(fn, counts[here] / n)
                still.append(i)
        active = still
        events += len(movers)
        if events > budget:
            raise LivelockError(f"{events} link changes; travel times must be positive")
    return trajectories, cost


def simulate_ticks(
    scenario: Scenario,
    strategies: Sequence[object],
    players: Sequence[PlayerSetup] | None = None,
    rngs: Sequence[np.random.Generator | None] | None = None,
    rng_seed: int | None = 0,
) -> tuple[np.ndarray, list[float]]:
    """Tick-grid twin of :func:`simulate_event`.

    Returns the empirical per-tick link proportions (the sampled analogue
    of the mean-field flow) and per-player costs.
    """
    grid, network = scenario.grid, scenario.network
    n = len(strategies)
    if players is None:
        players = assign_players(scenario, n)
    if rngs is None:
        root = np.random.SeedSequence(rng_seed)
        rngs = [np.random.default_rng(s) for s in root.spawn(n)]
    n_ticks = grid.n_ticks

    link = np.array([p.origin for p in players], dtype=np.int64)
    wait = np.array([round(p.departure_time / grid.dt) for p in players], dtype=np.int64)
    position = [0] * n
    absorbed = np.array([l == p.destination for l, p in zip(link, players)])
    cost = [0.0 if a else grid.horizon for a in absorbed]
    proportions = np.zeros((n_ticks, network.n_links))

    for t in range(n_ticks):
        np.add.at(proportions[t], link, 1.0 / n)
        if t == n_ticks - 1:
            break
        mover_ids = [
            i for i in range(n)
            if not absorbed[i] and wait[i] == 0 and network.successors(int(link[i]))
        ]
        for i in mover_ids:
            nxt = _next_link(strategies[i], position[i], t, int(link[i]),
                             players[i].destination, rngs[i])
            position[i] += 1
            link[i] = nxt
        counts = np.bincount(link, minlength=network.n_links)
        wait[~absorbed] -= 1
        for i in mover_ids:
            here = int(link[i])
            if here == players[i].destination:
                absorbed[i] = True
                cost[i] = (t + 1) * grid.dt
                wait[i] = 0
            elif not network.successors(here):
                wait[i] = n_ticks  # stuck
            else:
                fn = network.links[here].congestion
                wait[i] = travel_ticks(fn, counts[here] / n, grid) - 1
    return proportions, cost


def _probe_paths(scenario: Scenario, player: PlayerSetup) -> list[tuple[int, ...]]:
    paths = enumerate_pure_paths(
        scenario.network, player.origin, player.destination,
        scenario.grid.n_ticks, scenario.grid,
    )
    if not paths:
        raise ValueError(
            f"no path from link {player.origin} to link {player.destination}"
        )
    return paths


class _ReplayStream:
    """Replays a fixed vector of uniforms; re-instantiating it replays the
    exact same draws, which is what couples the probe's alternatives to
    identical opponent behavior within a sample."""

    __slots__ = ("draws", "cursor")

    def __init__(self, draws: np.ndarray):
        self.draws = draws
        self.cursor = 0

    def random(self) -> float:
        if self.cursor >= len(self.draws):
            raise LivelockError("player exhausted its decision randomness")
        value = self.draws[self.cursor]
        self.cursor += 1
        return float(value)


def deviation_incentive_mc(
    policy: Policy,
    n_players: int,
    scenario: Scenario,
    n_samples: int = 10_000,
    rng_seed: int = 0,
    mode: str = "event",
) -> DeviationEstimate:
    """Monte Carlo gain a single vehicle could get by switching to its best
    pure path while everyone else keeps the shared policy.

    Opponent randomness is identical across the probe's alternatives
    within a sample (replayed per-player uniforms), so each sample yields
    one nonnegative regret realization; the 95% half-width comes from the
    sample variance.  One probe per demand atom, mass-weighted.  Sample
    seeds are derived from (seed, sample index), so results do not depend
    on how samples are batched over workers.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if mode not in ("event", "tick"):
        raise ValueError(f"unknown mode {mode!r}")
    simulate = simulate_event if mode == "event" else simulate_ticks
    players = assign_players(scenario, n_players)
    probe_ids: dict[int, int] = {}
    for i, p in enumerate(players):
        probe_ids.setdefault(p.atom_index, i)
    atoms = list(probe_ids)
    weights = {a: sum(1 for p in players if p.atom_index == a) / n_players
               for a in atoms}
    probe_paths = {a: _probe_paths(scenario, players[probe_ids[a]])
                   for a in atoms}
    depth = scenario.network.n_links + 8  # decisions per player per run

    base_costs = {a: np.zeros(n_samples) for a in atoms}
    path_costs = {a: np.zeros((len(probe_paths[a]), n_samples)) for a in atoms}
    for s in range(n_samples):
        master = np.random.default_rng(np.random.SeedSequence((rng_seed, s)))
        draws = master.random((len(atoms), n_players, depth))
        for k, a in enumerate(atoms):
            probe = probe_ids[a]

            def streams() -> list[_ReplayStream]:
                return [_ReplayStream(draws[k, i]) for i in range(n_players)]

            strategies: list[object] = [policy] * n_players
            _, costs = simulate(scenario, strategies, players, rngs=streams())
            base_costs[a][s] = costs[probe]
            for j, q in enumerate(probe_paths[a]):
                strategies[probe] = PurePathStrategy(q)
                _, costs = simulate(scenario, strategies, players, rngs=streams())
                path_costs[a][j, s] = costs[probe]

    realized = sum(
        weights[a] * (base_costs[a] - path_costs[a].min(axis=0)) for a in atoms
    )
    fixed = sum(
        weights[a] * (base_costs[a] - path_costs[a][path_costs[a].mean(axis=1).argmin()])
        for a in atoms
    )

    def summarize(x: np.ndarray) -> tuple[float, float]:
        sd = float(x.std(ddof=1)) if n_samples > 1 else 0.0
        return float(x.mean()), 1.96 * sd / math.sqrt(n_samples)

    mean, half = summarize(realized)
    fixed_gap, fixed_half = summarize(fixed)
    per_path = {
        q: float(weights[a] * path_costs[a][j].mean())
        for a in atoms
        for j, q in enumerate(probe_paths[a])
    }
    return DeviationEstimate(mean, half, n_samples, fixed_gap, fixed_half, per_path)


def policy_path_distribution(policy: Policy, scenario: Scenario,
                             atom_index: int) -> dict[tuple[int, ...], float]:
    """Reduce a policy to a path mixture for one atom, walking the policy
    through its own mean-field flow.  Mass lost to cycles or truncation is
    renormalized away."""
    from .mfg import forward_flow, path_distribution

    flow = forward_flow(policy, scenario)
    atom = scenario.atoms[atom_index]
    dist = path_distribution(policy, flow, atom, min_prob=1e-12)
    probs = {path: p for path, p, _ in dist}
    total = sum(probs.values())
    if total <= 0:
        raise ValueError("policy reaches no complete path for this atom")
    return {path: p / total for path, p in probs.items()}


def deviation_incentive_exact(
    policy: Policy,
    n_players: int,
    scenario: Scenario,
    profile_budget: int = 10_000_000,
) -> float:
    """Exact expectation of the per-realization deviation gain.

    Opponents' behavior is reduced to independent pure-path draws; their
    joint draws are enumerated as path-count compositions (anonymity
    collapses the profile space), each evaluated with the deterministic
    event engine.  Matches :func:`deviation_incentive_mc` as the sample
    count grows.
    """
    players = assign_players(scenario, n_players)
    atom_paths = {
        i: _probe_paths(scenario, p) for i, p in enumerate(players)
    }
    max_paths = max(len(v) for v in atom_paths.values())
    if max_paths ** n_players > profile_budget:
        raise SizeBudgetError(
            f"{max_paths}^{n_players} pure profiles exceed the exact budget; "
            "use deviation_incentive_mc"
        )
    probe_ids: dict[int, int] = {}
    for i, p in enumerate(players):
        probe_ids.setdefault(p.atom_index, i)

    total = 0.0
    for atom_index, probe in probe_ids.items():
        weight = sum(1 for p in players if p.atom_index == atom_index) / n_players
        total += weight * _exact_probe_gap(policy, scenario, players, probe)
    return total


def _compositions(total: int, bins: int):
    if bins == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, bins - 1):
            yield (first,) + rest


def _exact_probe_gap(policy: Policy, scenario: Scenario,
                     players: Sequence[PlayerSetup], probe: int) -> float:
    opponents = [i for i in range(len(players)) if i != probe]
    groups: dict[int, list[int]] = {}
    for i in opponents:
        groups.setdefault(players[i].atom_index, []).append(i)
    group_atoms = sorted(groups)
    group_paths = {a: sorted(policy_path_distribution(policy, scenario, a).items())
                   for a in group_atoms}
    probe_paths = _probe_paths(scenario, players[probe])
    probe_mix = policy_path_distribution(policy, scenario,
                                         players[probe].atom_index)

    def group_draws(atom: int):
        paths = group_paths[atom]
        size = len(groups[atom])
        for comp in _compositions(size, len(paths)):
            weight = math.factorial(size)
            for count, (path, p) in zip(comp, paths):
                weight = weight * p**count / math.factorial(count)
            if weight > 0:
                yield comp, weight

    def joint(atoms: list[int]):
        if not atoms:
            yield {}, 1.0
            return
        head, tail = atoms[0], atoms[1:]
        for comp, w in group_draws(head):
            for rest, wr in joint(tail):
                yield {head: comp, **rest}, w * wr

    gap = 0.0
    for draw, weight in joint(group_atoms):
        strategies: list[object] = [None] * len(players)
        for atom, comp in draw.items():
            ids = groups[atom]
            cursor = 0
            for count, (path, _) in zip(comp, group_paths[atom]):
                for _ in range(count):
                    strategies[ids[cursor]] = PurePathStrategy(path)
                    cursor += 1
        costs_by_path = {}
        for q in probe_paths:
            strategies[probe] = PurePathStrategy(q)
            _, costs = simulate_event(scenario, strategies, players,
                                      rngs=[None] * len(players))
            costs_by_path[q] = costs[probe]
        own = sum(probe_mix.get(q, 0.0) * costs_by_path[q] for q in probe_paths)
        best = min(costs_by_path.values())
        gap += weight * (own - best)
    return gap


# ---------------------------------------------------------------------------
# External-sampling regret minimization on the tick-mode game tree.


def _regret_match(regrets: np.ndarray) -> np.ndarray:
    positive = np.maximum(regrets, 0.0)
    total = positive.sum()
    if total <= 0:
        return np.full_like(regrets, 1.0 / len(regrets))
    return positive / total


class _MccfrState:
    __slots__ = ("tick", "links", "waits", "absorbed_at")

    def __init__(self, tick, links, waits, absorbed_at):
        self.tick = tick
        self.links = links
        self.waits = waits
        self.absorbed_at = absorbed_at


def mccfr_solve(
    scenario: Scenario,
    n_players: int,
    iterations: int,
    rng_seed: int = 0,
) -> tuple[list[dict], float]:
    """External-sampling regret minimization over the tick-mode game.

    A player's information is its own (tick, link, destination); regret
    matching runs per information set, and the average strategy profile is
    returned together with the wall time per ten iterations.
    """
    if n_players > 10:
        raise SizeBudgetError("regret minimization is capped at 10 players")
    grid, network = scenario.grid, scenario.network
    players = assign_players(scenario, n_players)
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    regrets: list[dict[tuple, np.ndarray]] = [dict() for _ in range(n_players)]
    averages: list[dict[tuple, np.ndarray]] = [dict() for _ in range(n_players)]

    def initial_state() -> _MccfrState:
        links = [p.origin for p in players]
        waits = [round(p.departure_time / grid.dt) for p in players]
        return _MccfrState(0, links, waits, [None] * n_players)

    def advance(state: _MccfrState) -> tuple[_MccfrState | None, list[int]]:
        """Jump to the next tick with movers; None once the game is over."""
        tick, links, waits = state.tick, state.links, state.waits
        absorbed = state.absorbed_at
        while True:
            live = [i for i in range(n_players) if absorbed[i] is None]
            if not live or tick >= grid.n_ticks - 1:
                return None, []
            movers = [i for i in live if waits[i] == 0
                      and network.successors(links[i])]
            if movers:
                return _MccfrState(tick, links, waits, absorbed), movers
            jump = min(waits[i] for i in live)
            jump = max(1, jump)
            if tick + jump >= grid.n_ticks:
                return None, []
            waits = [w if absorbed[i] is not None else max(0, w - jump)
                     for i, w in enumerate(waits)]
            tick += jump
            state = _MccfrState(tick, links, waits, absorbed)

    def apply_moves(state: _MccfrState, movers: list[int],
                    choices: dict[int, int]) -> _MccfrState:
        links = list(state.links)
        waits = list(state.waits)
        absorbed = list(state.absorbed_at)
        mover_set = set(movers)
        for i in movers:
            links[i] = choices[i]
        counts: dict[int, int] = {}
        for l in links:
            counts[l] = counts.get(l, 0) + 1
        tick = state.tick
        for i in range(n_players):
            if absorbed[i] is not None:
                continue
            if i in mover_set:
                here = links[i]
                if here == players[i].destination:
                    absorbed[i] = tick + 1
                    waits[i] = 0
                else:
                    fn = network.links[here].congestion
                    waits[i] = travel_ticks(fn, counts[here] / n_players, grid) - 1
            else:
                waits[i] = max(0, waits[i] - 1)
        return _MccfrState(tick + 1, links, waits, absorbed)

    def cost_of(state_absorbed, i: int) -> float:
        at = state_absorbed[i]
        return at * grid.dt if at is not None else grid.horizon

    def traverse(state: _MccfrState, movers: list[int], pending: int,
                 choices: dict[int, int], traverser: int) -> float:
        if state.absorbed_at[traverser] is not None:
            return -cost_of(state.absorbed_at, traverser)
        if pending == len(movers):
            nxt = apply_moves(state, movers, choices)
            advanced, next_movers = advance(nxt)
            if advanced is None:
                return -cost_of(nxt.absorbed_at, traverser)
            return traverse(advanced, next_movers, 0, {}, traverser)
        i = movers[pending]
        succ = network.successors(state.links[i])
        key = (state.tick, state.links[i], players[i].destination)
        table = regrets[i].setdefault(key, np.zeros(len(succ)))
        sigma = _regret_match(table)
        if i == traverser:
            values = np.zeros(len(succ))
            for j, a in enumerate(succ):
                choices[i] = a
                values[j] = traverse(state, movers, pending + 1, choices, traverser)
            del choices[i]
            node_value = float(sigma @ values)
            table += values - node_value
            return node_value
        avg = averages[i].setdefault(key, np.zeros(len(succ)))
        avg += sigma
        j = int(np.searchsorted(np.cumsum(sigma), rng.random()))
        choices[i] = succ[min(j, len(succ) - 1)]
        value = traverse(state, movers, pending + 1, choices, traverser)
        del choices[i]
        return value

    start = time.perf_counter()
    for _ in range(iterations):
        for traverser in range(n_players):
            state, movers = advance(initial_state())
            if state is None:
                break
            traverse(state, movers, 0, {}, traverser)
    elapsed = time.perf_counter() - start

    profile = []
    for i in range(n_players):
        strat = {}
        for key in averages[i].keys() | regrets[i].keys():
            succ = network.successors(key[1])
            totals = averages[i].get(key)
            if totals is not None and totals.sum() > 0:
                probs = totals / totals.sum()
            else:
                # never sampled as an opponent (e.g. a single player):
                # fall back to the regret-matched strategy
                probs = _regret_match(regrets[i].get(key, np.zeros(len(succ))))
            strat[key] = {a: float(p) for a, p in zip(succ, probs)}
        profile.append(strat)
    per_ten = elapsed / iterations * 10 if iterations else 0.0
    return profile, per_ten
