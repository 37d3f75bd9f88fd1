"""Directed road graph with volume-delay (congestion) functions.

A network is a set of directed links; congestion on a link maps the
proportion of the population currently on that link to a travel time.
Origin/destination virtual links let demand endpoints live in the same
"location = link" state representation as road links.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

ROAD = "road"
ORIGIN_VIRTUAL = "origin_virtual"
DESTINATION_VIRTUAL = "destination_virtual"

CONGESTION_FORMS = ("constant", "affine", "bpr", "step_lt", "step_le")

#: Proportions may exceed the [0, 1] domain by at most this much before
#: evaluation is treated as a hard error rather than clamped roundoff.
PROPORTION_SLACK = 1e-9


class CongestionDomainError(ValueError):
    """Proportion argument outside [0, 1] beyond roundoff slack."""


@dataclass(frozen=True)
class CongestionFn:
    """Travel time on a link as a function of the on-link proportion.

    Forms:
      constant: t0
      affine:   t0 + alpha * mu
      bpr:      t0 * (1 + alpha * (mu / rel_capacity) ** beta)
      step_lt:  t0 if mu <  rel_capacity else alpha
      step_le:  t0 if mu <= rel_capacity else alpha

    The step forms are discontinuous and exist for regression scenarios
    where no equilibrium exists; every other form is continuous on [0, 1].
    """

    form: str
    t0: float
    alpha: float = 0.0
    beta: float = 1.0
    rel_capacity: float = 1.0

    def __post_init__(self) -> None:
        if self.form not in CONGESTION_FORMS:
            raise ValueError(f"unknown congestion form {self.form!r}")
        if self.t0 < 0:
            raise ValueError("free-flow travel time must be nonnegative")
        if self.form in ("affine",) and self.t0 == 0 and self.alpha <= 0:
            raise ValueError("degenerate affine congestion: t0 = alpha = 0")
        if self.form == "bpr":
            if self.t0 <= 0:
                raise ValueError("bpr requires a positive free-flow time")
            if self.rel_capacity <= 0:
                raise ValueError("bpr requires a positive relative capacity")

    def __call__(self, mu: float) -> float:
        return evaluate_congestion(self, mu)


def constant(t0: float) -> CongestionFn:
    return CongestionFn("constant", t0)


def affine(t0: float, alpha: float) -> CongestionFn:
    return CongestionFn("affine", t0, alpha)


def bpr(t0: float, alpha: float, beta: float, rel_capacity: float) -> CongestionFn:
    return CongestionFn("bpr", t0, alpha, beta, rel_capacity)


def step(low: float, high: float, threshold: float, inclusive: bool) -> CongestionFn:
    """Step congestion: ``low`` below the threshold, ``high`` above.

    ``inclusive`` controls whether the threshold itself still gets ``low``.
    """
    form = "step_le" if inclusive else "step_lt"
    return CongestionFn(form, low, high, rel_capacity=threshold)


def evaluate_congestion(fn: CongestionFn, mu: float) -> float:
    """Travel time at on-link proportion ``mu`` in [0, 1]."""
    if mu < 0.0:
        if mu < -PROPORTION_SLACK:
            raise CongestionDomainError(f"proportion {mu} below 0")
        mu = 0.0
    elif mu > 1.0:
        if mu > 1.0 + PROPORTION_SLACK:
            raise CongestionDomainError(f"proportion {mu} above 1")
        mu = 1.0
    if fn.form == "constant":
        return fn.t0
    if fn.form == "affine":
        return fn.t0 + fn.alpha * mu
    if fn.form == "bpr":
        return fn.t0 * (1.0 + fn.alpha * (mu / fn.rel_capacity) ** fn.beta)
    if fn.form == "step_lt":
        return fn.t0 if mu < fn.rel_capacity else fn.alpha
    return fn.t0 if mu <= fn.rel_capacity else fn.alpha


def congestion_times(fn: CongestionFn, mu: "np.ndarray") -> "np.ndarray":
    """Vectorized :func:`evaluate_congestion` over an array of proportions."""
    import numpy as np

    if float(np.min(mu)) < -PROPORTION_SLACK or float(np.max(mu)) > 1.0 + PROPORTION_SLACK:
        raise CongestionDomainError("proportion array leaves [0, 1]")
    mu = np.clip(mu, 0.0, 1.0)
    if fn.form == "constant":
        return np.full_like(mu, fn.t0)
    if fn.form == "affine":
        return fn.t0 + fn.alpha * mu
    if fn.form == "bpr":
        return fn.t0 * (1.0 + fn.alpha * (mu / fn.rel_capacity) ** fn.beta)
    if fn.form == "step_lt":
        return np.where(mu < fn.rel_capacity, fn.t0, fn.alpha)
    return np.where(mu <= fn.rel_capacity, fn.t0, fn.alpha)


def scale_capacity(fn: CongestionFn, n_vehicles: int, n0: int) -> CongestionFn:
    """Re-tune a congestion function from a population of ``n0`` to ``n_vehicles``.

    The returned function f' satisfies f'(n / n_vehicles) = f(n / n0) for
    every vehicle count n, by scaling the relative capacity.
    """
    if n_vehicles <= 0 or n0 <= 0:
        raise ValueError("vehicle counts must be positive")
    return replace(fn, rel_capacity=fn.rel_capacity * n0 / n_vehicles)


@dataclass(frozen=True)
class Link:
    id: int
    tail: object
    head: object
    congestion: CongestionFn
    kind: str = ROAD

    @property
    def is_road(self) -> bool:
        return self.kind == ROAD


class Network:
    """Immutable directed link graph.

    Successor ids are kept sorted ascending so every argmin/argmax over
    successors breaks ties toward the lowest link id, on every platform.
    """

    def __init__(self, links: Sequence[Link]):
        self.links: tuple[Link, ...] = tuple(links)
        ids = [link.id for link in self.links]
        if ids != list(range(len(ids))):
            raise ValueError("link ids must be 0..n-1 in order")
        self._succ: tuple[tuple[int, ...], ...] = self._build_successors()
        self._origin_of: dict[object, int] = {
            link.head: link.id for link in self.links if link.kind == ORIGIN_VIRTUAL
        }
        self._destination_of: dict[object, int] = {
            link.tail: link.id for link in self.links if link.kind == DESTINATION_VIRTUAL
        }

    def _build_successors(self) -> tuple[tuple[int, ...], ...]:
        by_tail: dict[object, list[int]] = {}
        for link in self.links:
            by_tail.setdefault(link.tail, []).append(link.id)
        succ = []
        for link in self.links:
            if link.kind == DESTINATION_VIRTUAL:
                succ.append(())  # absorbing
            else:
                succ.append(tuple(sorted(by_tail.get(link.head, ()))))
        return tuple(succ)

    def __len__(self) -> int:
        return len(self.links)

    def successors(self, link_id: int) -> tuple[int, ...]:
        return self._succ[link_id]

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def road_links(self) -> tuple[Link, ...]:
        return tuple(link for link in self.links if link.is_road)

    def origin_link(self, node: object) -> int:
        try:
            return self._origin_of[node]
        except KeyError:
            raise KeyError(f"node {node!r} has no origin link") from None

    def destination_link(self, node: object) -> int:
        try:
            return self._destination_of[node]
        except KeyError:
            raise KeyError(f"node {node!r} has no destination link") from None

    @property
    def destination_links(self) -> tuple[int, ...]:
        return tuple(sorted(self._destination_of.values()))


def build_network(links: Iterable[tuple[object, object, CongestionFn]]) -> Network:
    """Network of road links from (tail, head, congestion) triples."""
    out = [
        Link(i, tail, head, fn, ROAD)
        for i, (tail, head, fn) in enumerate(links)
    ]
    return Network(out)


def augment_od(
    network: Network,
    origin_nodes: Sequence[object],
    destination_nodes: Sequence[object],
    origin_travel_time: float = 0.0,
) -> Network:
    """Add one virtual origin link per origin node and one virtual
    destination link per destination node.

    The origin link's travel time is ``origin_travel_time`` (the engine
    rounds it up to at least one tick, so 0.0 means "exactly one tick").
    Destination links are absorbing and cost nothing.
    """
    nodes = {link.tail for link in network.links} | {link.head for link in network.links}
    for node in list(origin_nodes) + list(destination_nodes):
        if node not in nodes:
            raise KeyError(f"node {node!r} not present in the network")
    links = list(network.links)
    next_id = len(links)
    for node in dict.fromkeys(origin_nodes):  # input order, deduped
        links.append(
            Link(next_id, f"src:{node}", node, constant(origin_travel_time), ORIGIN_VIRTUAL)
        )
        next_id += 1
    for node in dict.fromkeys(destination_nodes):
        links.append(
            Link(next_id, node, f"snk:{node}", constant(0.0), DESTINATION_VIRTUAL)
        )
        next_id += 1
    return Network(links)
