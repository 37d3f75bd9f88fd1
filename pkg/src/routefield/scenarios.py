"""Canonical benchmark scenarios, built programmatically.

The same networks also ship as JSON scenario files under ``scenarios/``
for the command line; these constructors are the single source of truth
for tests and demos.
"""

from __future__ import annotations

from .kernel import DemandAtom, Scenario, TimeGrid
from .network import affine, augment_od, build_network, constant, step


def pigou_scenario(
    variant: str = "linear",
    dt: float = 0.01,
    horizon: float = 2.0,
    n0: int = 100,
    cost_scale: float = 2.0,
) -> Scenario:
    """Two parallel links between one origin/destination pair.

    variant "linear":  upper link costs 0.5*cost_scale flat, lower costs
                       x*cost_scale (the closed-form deviation values are
                       stated for this variant and scale linearly).
    variant "classic": upper link costs 2 flat, lower costs 1 + 2x.
    Both split half/half at equilibrium.  Pass a horizon above the worst
    path cost when nothing may truncate (the deviation oracles assume so).
    """
    if variant == "linear":
        fns = [constant(0.5 * cost_scale), affine(0.0, cost_scale)]
    elif variant == "classic":
        fns = [constant(2.0), affine(1.0, 2.0)]
    else:
        raise ValueError(f"unknown pigou variant {variant!r}")
    net = build_network([(1, 2, fns[0]), (1, 2, fns[1])])
    net = augment_od(net, [1], [2], origin_travel_time=dt)
    grid = TimeGrid(dt, horizon)
    atoms = (DemandAtom(net.origin_link(1), net.destination_link(2), 0, 1.0),)
    return Scenario(net, grid, atoms, n0=n0, name=f"pigou-{variant}")


def braess_scenario(dt: float = 0.05, horizon: float = 5.0, n0: int = 1000) -> Scenario:
    """Five-link Braess diamond; one origin (node 1), one destination (node 4).

    Link ids: 0=AB, 1=AC, 2=BC, 3=BD, 4=CD, then the origin and
    destination virtual links.
    """
    a, b, c, d = 1, 2, 3, 4
    net = build_network(
        [
            (a, b, affine(1.0, 1.0)),
            (a, c, constant(2.0)),
            (b, c, constant(0.25)),
            (b, d, constant(2.0)),
            (c, d, affine(1.0, 1.0)),
        ]
    )
    net = augment_od(net, [a], [d], origin_travel_time=dt)
    grid = TimeGrid(dt, horizon)
    atoms = (DemandAtom(net.origin_link(a), net.destination_link(d), 0, 1.0),)
    return Scenario(net, grid, atoms, n0=n0, name="braess")


def augmented_braess_scenario(
    dt: float = 0.05, horizon: float = 5.0, n0: int = 250
) -> Scenario:
    """Braess diamond with a second destination after node C and five
    demand atoms over two destinations and three departure times."""
    a, b, c, d = 1, 2, 3, 4
    net = build_network(
        [
            (a, b, affine(1.0, 1.0)),
            (a, c, constant(2.0)),
            (b, c, constant(0.25)),
            (b, d, constant(2.0)),
            (c, d, affine(1.0, 1.0)),
        ]
    )
    net = augment_od(net, [a], [d, c], origin_travel_time=dt)
    grid = TimeGrid(dt, horizon)
    o = net.origin_link(a)
    to_d, to_c = net.destination_link(d), net.destination_link(c)

    def tick(time: float) -> int:
        return int(time / dt + 1e-9)

    atoms = (
        DemandAtom(o, to_d, tick(0.0), 50 / 250),
        DemandAtom(o, to_d, tick(0.5), 50 / 250),
        DemandAtom(o, to_d, tick(1.0), 50 / 250),
        DemandAtom(o, to_c, tick(0.0), 50 / 250),
        DemandAtom(o, to_c, tick(1.0), 50 / 250),
    )
    return Scenario(net, grid, atoms, n0=n0, name="braess-augmented")


def discontinuous_pigou_scenario(
    dt: float = 0.02, horizon: float = 4.0, n0: int = 100
) -> Scenario:
    """Two-link network with step congestion under which travel times can
    never equalize on the used links, so no equilibrium exists.  Mirror
    descent on it keeps a bounded-away deviation incentive forever."""
    net = build_network(
        [
            (1, 2, step(1.0, 2.0, 0.5, inclusive=False)),
            (1, 2, step(1.0, 2.0, 0.5, inclusive=True)),
        ]
    )
    net = augment_od(net, [1], [2], origin_travel_time=dt)
    grid = TimeGrid(dt, horizon)
    atoms = (DemandAtom(net.origin_link(1), net.destination_link(2), 0, 1.0),)
    return Scenario(net, grid, atoms, n0=n0, name="pigou-discontinuous")
