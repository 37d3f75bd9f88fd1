"""Closed-form and brute-force ground truths.

Everything here is independent of the solver code paths it validates:
the two-link deviation incentive has a rational-arithmetic closed form,
tiny games get full pure-profile enumeration, and the discontinuous-cost
scenario provides the no-equilibrium regression signature.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .kernel import Policy, Scenario, enumerate_pure_paths, mixture_policy
from .nplayer import (
    PurePathStrategy,
    SizeBudgetError,
    assign_players,
    simulate_event,
)
from .scenarios import discontinuous_pigou_scenario, pigou_scenario

__all__ = [
    "PigouParams",
    "pigou_mf_equilibrium",
    "pigou_equilibrium_cost",
    "pigou_deviation_formula",
    "brute_force_nash",
    "discontinuous_pigou_scenario",
    "pigou_scenario",
]


@dataclass(frozen=True)
class PigouParams:
    """Two parallel links; ``variant`` picks the cost pairing.

    "linear":  c_upper = 0.5 * T, c_lower = x * T
    "classic": c_upper = 2,       c_lower = 1 + 2x
    """

    horizon: float = 2.0
    variant: str = "linear"

    def costs(self) -> tuple:
        t = self.horizon
        if self.variant == "linear":
            return (lambda x: 0.5 * t, lambda x: x * t)
        if self.variant == "classic":
            return (lambda x: 2.0, lambda x: 1.0 + 2.0 * x)
        raise ValueError(f"unknown pigou variant {self.variant!r}")


def pigou_mf_equilibrium(params: PigouParams, tol: float = 1e-12) -> float:
    """Equilibrium proportion on the load-sensitive link, by bisection on
    the travel-time equalization condition.  Both variants give 0.5."""
    c_flat, c_load = params.costs()
    lo, hi = 0.0, 1.0
    if c_load(1.0) <= c_flat(0.0):
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if c_load(mid) < c_flat(1.0 - mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pigou_equilibrium_cost(params: PigouParams) -> float:
    c_flat, _ = params.costs()
    return c_flat(1.0 - pigou_mf_equilibrium(params))


def pigou_deviation_formula(n_players: int, horizon: float) -> float:
    """Average gain a single vehicle gets by switching to the better link
    after seeing everyone's draws, when all N play the half/half policy on
    the linear two-link network with cost scale T.

    Exact rational evaluation of sum over the number m of opponents on
    the load-sensitive link: with probability C(N-1, m) / 2^(N-1) the
    better link saves |T/2 - (m+1) T/N| half the time, giving

        T / (N 2^N) * sum_m C(N-1, m) * max(N/2 - m - 1, m + 1 - N/2).

    Linear in T; decreasing toward zero as N grows.
    """
    if n_players < 1:
        raise ValueError("need at least one player")
    n = n_players
    total = Fraction(0)
    for m in range(n):
        weight = math.comb(n - 1, m)
        gain = max(Fraction(n, 2) - m - 1, Fraction(m + 1) - Fraction(n, 2))
        total += weight * gain
    return float(Fraction(horizon) * total / (n * 2**n))


def braess_equilibrium_policy(scenario: Scenario) -> Policy:
    """Analytic mean-field equilibrium of the diamond network: a quarter
    of the population on each outer route and half through the shortcut,
    which equalizes all three path travel times."""
    origin = scenario.atoms[0].origin
    dest = scenario.atoms[0].destination
    paths = enumerate_pure_paths(scenario.network, origin, dest,
                                 scenario.grid.n_ticks, scenario.grid)
    if len(paths) != 3:
        raise ValueError("expected the three diamond routes")
    by_len = sorted(paths, key=len)  # two 2-hop outer routes, one 3-hop
    weights = {tuple(by_len[0]): 0.25, tuple(by_len[1]): 0.25, tuple(by_len[2]): 0.5}
    return mixture_policy(scenario, list(weights.items()), dest)


def profile_costs(scenario: Scenario, profile: list[tuple[int, ...]],
                  players=None) -> list[float]:
    """Deterministic event-engine costs of a pure path profile."""
    strategies = [PurePathStrategy(p) for p in profile]
    _, costs = simulate_event(scenario, strategies, players,
                              rngs=[None] * len(profile))
    return costs


def brute_force_nash(
    scenario: Scenario,
    n_players: int,
    path_budget: int = 1_000_000,
) -> tuple[list[tuple[tuple[int, ...], ...]], tuple[tuple[int, ...], ...]]:
    """All pure-path Nash profiles of the N-player game, by enumeration.

    A profile is an equilibrium when no unilateral path swap strictly
    lowers the swapper's cost.  Also returns the profile minimizing the
    largest unilateral improvement (the minimax-deviation profile).
    """
    players = assign_players(scenario, n_players)
    paths_per_player = [
        enumerate_pure_paths(scenario.network, p.origin, p.destination,
                             scenario.grid.n_ticks, scenario.grid)
        for p in players
    ]
    total = math.prod(len(p) for p in paths_per_player)
    if total > path_budget:
        raise SizeBudgetError(f"{total} pure profiles exceed the budget {path_budget}")

    cache: dict[tuple, list[float]] = {}

    def costs(profile: tuple) -> list[float]:
        if profile not in cache:
            cache[profile] = profile_costs(scenario, list(profile), players)
        return cache[profile]

    equilibria = []
    best_profile = None
    best_gap = math.inf
    for profile in itertools.product(*paths_per_player):
        base = costs(profile)
        worst = 0.0
        for i, options in enumerate(paths_per_player):
            for q in options:
                if q == profile[i]:
                    continue
                swapped = profile[:i] + (q,) + profile[i + 1 :]
                worst = max(worst, base[i] - costs(swapped)[i])
        if worst <= 1e-12:
            equilibria.append(profile)
        if worst < best_gap:
            best_gap = worst
            best_profile = profile
    return equilibria, best_profile


def profile_deviation_gap(scenario: Scenario, profile: list[tuple[int, ...]]) -> float:
    """Largest unilateral improvement available in a pure profile; zero
    exactly on the equilibria found by :func:`brute_force_nash`."""
    players = assign_players(scenario, len(profile))
    paths_per_player = [
        enumerate_pure_paths(scenario.network, p.origin, p.destination,
                             scenario.grid.n_ticks, scenario.grid)
        for p in players
    ]
    base = profile_costs(scenario, profile, players)
    worst = 0.0
    for i, options in enumerate(paths_per_player):
        for q in options:
            if q == tuple(profile[i]):
                continue
            swapped = list(profile)
            swapped[i] = q
            worst = max(worst, base[i] - profile_costs(scenario, swapped, players)[i])
    return worst
