"""Shared discretized game kernel.

Holds the tick grid, agent states, the policy table, demand atoms, path
enumeration and single-agent trajectory sampling.  Both the mean-field
solver and the finite-player simulators build on these.

Tick conventions (used consistently everywhere):

* An agent's stored ``waiting`` is the number of ticks it remains on its
  current link *after* the current tick.  Arriving on a link whose travel
  time spans ``k`` ticks stores ``waiting = k - 1``, so the agent occupies
  the link for exactly ``k`` ticks and stands on the next link ``k`` ticks
  after arrival.
* Decisions happen at ``waiting == 0`` on non-absorbed states; the chosen
  successor is occupied from the next tick on.
* A demand atom departing at tick ``s`` is seeded on its origin link with
  ``waiting = s``: it spends the departure delay plus one origin-link tick
  there and stands on its first road link at tick ``s + 1``.
* Cost is one tick-length per tick spent off the destination link,
  truncated at the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .network import (
    DESTINATION_VIRTUAL,
    ORIGIN_VIRTUAL,
    CongestionFn,
    Network,
    evaluate_congestion,
)


class IncompletePolicyError(KeyError):
    """A reachable decision state has no usable policy row."""


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    horizon: float

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(
                f"horizon {self.horizon} is not an integer number of ticks of {self.dt}"
            )

    @property
    def n_ticks(self) -> int:
        return round(self.horizon / self.dt)


class AgentState(NamedTuple):
    link: int
    waiting: int
    destination: int


@dataclass(frozen=True)
class DemandAtom:
    """(origin link, destination link, departure tick, mass) component of
    the initial state distribution."""

    origin: int
    destination: int
    departure_tick: int
    mass: float


@dataclass(frozen=True)
class Scenario:
    network: Network
    grid: TimeGrid
    atoms: tuple[DemandAtom, ...]
    n0: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        total = sum(a.mass for a in self.atoms)
        if self.atoms and abs(total - 1.0) > 1e-9:
            raise ValueError(f"demand atom masses sum to {total}, expected 1")
        for a in self.atoms:
            if not 0 <= a.departure_tick < self.grid.n_ticks:
                raise ValueError("departure tick outside the time grid")
            if self.network.links[a.origin].kind != ORIGIN_VIRTUAL:
                raise ValueError(f"atom origin {a.origin} is not an origin link")
            if self.network.links[a.destination].kind != DESTINATION_VIRTUAL:
                raise ValueError(f"atom destination {a.destination} is not a destination link")

    @property
    def destinations(self) -> tuple[int, ...]:
        return tuple(sorted({a.destination for a in self.atoms}))


def travel_ticks(fn: CongestionFn, mu: float, grid: TimeGrid) -> int:
    """Travel time rounded up to whole ticks, never less than one.

    The 1e-9 slack keeps exact multiples of dt from spilling into an
    extra tick.
    """
    t = evaluate_congestion(fn, mu)
    return max(1, math.ceil(t / grid.dt - 1e-9))


def free_flow_ticks(network: Network, link_id: int, grid: TimeGrid) -> int:
    return travel_ticks(network.links[link_id].congestion, 0.0, grid)


def enumerate_pure_paths(
    network: Network,
    origin: int,
    destination: int,
    max_ticks: int,
    grid: TimeGrid,
) -> list[tuple[int, ...]]:
    """All simple link paths origin -> destination whose free-flow tick
    length fits in ``max_ticks``, in lexicographic link-id order."""
    if network.links[origin].kind != ORIGIN_VIRTUAL:
        raise ValueError("path enumeration starts from an origin link")
    if network.links[destination].kind != DESTINATION_VIRTUAL:
        raise ValueError("path enumeration ends at a destination link")
    out: list[tuple[int, ...]] = []
    path = [origin]
    seen = {origin}

    def walk(link: int, ticks: int) -> None:
        if ticks > max_ticks:
            return
        if link == destination:
            out.append(tuple(path))
            return
        for nxt in network.successors(link):  # sorted -> lexicographic output
            if nxt in seen:
                continue
            step = free_flow_ticks(network, nxt, grid) if nxt != destination else 0
            seen.add(nxt)
            path.append(nxt)
            walk(nxt, ticks + step)
            path.pop()
            seen.remove(nxt)

    walk(origin, free_flow_ticks(network, origin, grid))
    return out


class Policy:
    """Per-tick decision table: (tick, link, destination) -> distribution
    over the link's successors.

    Rows exist for every tick and every (link, destination) pair with at
    least one successor; the waiting time is deliberately not part of the
    key because decisions only ever happen once it reaches zero.  Rows are
    stored aligned with ``network.successors(link)``.
    """

    def __init__(self, network: Network, grid: TimeGrid, destinations: Sequence[int]):
        self.network = network
        self.grid = grid
        self.destinations = tuple(destinations)
        self._dest_index = {d: i for i, d in enumerate(self.destinations)}
        self.max_succ = max((len(network.successors(l.id)) for l in network.links), default=0)
        shape = (grid.n_ticks, network.n_links, len(self.destinations), self.max_succ)
        self.table = np.zeros(shape, dtype=np.float64)
        self._succ_len = np.array(
            [len(network.successors(l.id)) for l in network.links], dtype=np.int64
        )

    @classmethod
    def uniform(cls, scenario: Scenario) -> "Policy":
        pol = cls(scenario.network, scenario.grid, scenario.destinations)
        for link in range(pol.network.n_links):
            k = pol._succ_len[link]
            if k:
                pol.table[:, link, :, :k] = 1.0 / k
        return pol

    def dest_index(self, destination: int) -> int:
        try:
            return self._dest_index[destination]
        except KeyError:
            raise IncompletePolicyError(f"no rows for destination link {destination}") from None

    def probs(self, tick: int, link: int, destination: int) -> np.ndarray:
        k = self._succ_len[link]
        if k == 0:
            raise IncompletePolicyError(f"link {link} has no successors")
        row = self.table[tick, link, self.dest_index(destination), :k]
        total = row.sum()
        if not math.isfinite(total) or abs(total - 1.0) > 1e-9:
            raise IncompletePolicyError(
                f"policy row at tick={tick} link={link} dest={destination} sums to {total}"
            )
        return row

    def set_row(self, tick: int, link: int, destination: int, probs: Sequence[float]) -> None:
        k = self._succ_len[link]
        if len(probs) != k:
            raise ValueError("row length must match the successor count")
        self.table[tick, link, self.dest_index(destination), :k] = probs

    def sample(self, tick: int, link: int, destination: int, rng) -> int:
        """Draw a successor; ``rng`` needs only a ``random()`` method."""
        row = self.probs(tick, link, destination)
        r = rng.random() * row.sum()
        acc = 0.0
        succ = self.network.successors(link)
        for p, nxt in zip(row, succ):
            acc += p
            if r < acc:
                return nxt
        return succ[-1]

    def copy(self) -> "Policy":
        out = Policy(self.network, self.grid, self.destinations)
        out.table = self.table.copy()
        return out

    def decision_rows(self) -> Iterator[tuple[int, int, int, np.ndarray]]:
        """Yield (tick, link, destination, row) over all decision keys."""
        for t in range(self.grid.n_ticks):
            for link in range(self.network.n_links):
                k = self._succ_len[link]
                if k == 0:
                    continue
                for d in self.destinations:
                    yield t, link, d, self.table[t, link, self._dest_index[d], :k]


def path_policy(scenario: Scenario, path: Sequence[int], destination: int | None = None) -> Policy:
    """Deterministic policy following ``path``; uniform off the path."""
    dest = destination if destination is not None else path[-1]
    return mixture_policy(scenario, [(tuple(path), 1.0)], dest)


def mixture_policy(
    scenario: Scenario,
    weighted_paths: Sequence[tuple[Sequence[int], float]],
    destination: int | None = None,
) -> Policy:
    """Time-invariant policy realizing a weighted mixture of paths.

    Each link's row splits mass proportionally to the weight flowing from
    that link to each successor across the given paths; links off every
    path keep uniform rows.  For path families where shared links share
    their continuation structure (all the benchmark networks here), the
    induced path distribution is exactly the requested mixture.
    """
    pol = Policy.uniform(scenario)
    dest = destination if destination is not None else weighted_paths[0][0][-1]
    through: dict[tuple[int, int], float] = {}
    for path, weight in weighted_paths:
        if path[-1] != dest:
            raise ValueError("all paths must end at the shared destination")
        for a, b in zip(path, path[1:]):
            through[(a, b)] = through.get((a, b), 0.0) + weight
    by_link: dict[int, float] = {}
    for (a, _), w in through.items():
        by_link[a] = by_link.get(a, 0.0) + w
    for link, total in by_link.items():
        succs = scenario.network.successors(link)
        row = [through.get((link, s), 0.0) / total for s in succs]
        for t in range(scenario.grid.n_ticks):
            pol.set_row(t, link, dest, row)
    return pol


def sample_trajectory(
    policy: Policy,
    proportions: np.ndarray,
    start: AgentState,
    grid: TimeGrid,
    rng_seed: int,
) -> tuple[list[AgentState], float]:
    """Roll a single agent through frozen per-tick link proportions.

    Returns the tick-indexed state sequence and the travel cost (arrival
    time, or the horizon if the agent is still en route at the end).
    """
    rng = np.random.default_rng(rng_seed)
    network = policy.network
    n_ticks = grid.n_ticks
    link, waiting, dest = start
    states = [AgentState(link, waiting, dest)]
    arrival_tick = 0 if link == dest else None
    for t in range(n_ticks):
        if arrival_tick is None:
            if waiting > 0:
                waiting -= 1
            else:
                link = policy.sample(t, link, dest, rng)
                if link == dest:
                    waiting = 0
                    arrival_tick = t + 1
                else:
                    t_arr = t + 1
                    mu = float(proportions[t_arr, link]) if t_arr < n_ticks else 0.0
                    waiting = travel_ticks(network.links[link].congestion, mu, grid) - 1
        states.append(AgentState(link, waiting, dest))
    cost = arrival_tick * grid.dt if arrival_tick is not None else grid.horizon
    return states, cost
