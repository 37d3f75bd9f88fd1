"""TNTP network parsing, JSON scenario configuration, and CSV emission.

The TNTP link file convention: ``<KEY> value`` metadata lines up to
``<END OF METADATA>``, comment lines starting with ``~``, then ten
whitespace-separated fields per link terminated by ``;``.  Scenario files
are plain JSON; see :class:`ScenarioConfig`.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kernel import DemandAtom, Scenario, TimeGrid
from .mfg import DistributionFlow, HistoryRow, OmdSchedule
from .network import CongestionFn, Network, affine, augment_od, bpr, build_network, constant
from .nplayer import DeviationEstimate

FLOAT_FMT = "%.9g"


class TntpParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    """Scenario configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class TntpRow:
    init_node: int
    term_node: int
    capacity: float
    length: float
    free_flow_time: float
    b: float
    power: float
    speed: float
    toll: float
    link_type: int


@dataclass(frozen=True)
class TntpNetworkFile:
    number_of_nodes: int
    number_of_links: int
    first_thru_node: int
    rows: tuple[TntpRow, ...]


_REQUIRED_KEYS = ("NUMBER OF NODES", "NUMBER OF LINKS", "FIRST THRU NODE")


def parse_tntp(text: str) -> TntpNetworkFile:
    """Parse a TNTP link file; errors carry the offending line number."""
    lines = text.splitlines()
    metadata: dict[str, str] = {}
    body_start = None
    for idx, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("<END OF METADATA>"):
            body_start = idx
            break
        if line.startswith("<"):
            close = line.find(">")
            if close < 0:
                raise TntpParseError("unterminated metadata key", idx)
            metadata[line[1:close].strip().upper()] = line[close + 1 :].strip()
        elif line.startswith("~"):
            continue
        else:
            raise TntpParseError("expected metadata before <END OF METADATA>", idx)
    if body_start is None:
        raise TntpParseError("missing <END OF METADATA>", len(lines))
    for key in _REQUIRED_KEYS:
        if key not in metadata:
            raise TntpParseError(f"missing metadata key <{key}>", body_start)

    def intmeta(key: str) -> int:
        try:
            return int(metadata[key])
        except ValueError:
            raise TntpParseError(f"metadata <{key}> is not an integer", body_start) from None

    n_nodes = intmeta("NUMBER OF NODES")
    n_links = intmeta("NUMBER OF LINKS")
    first_thru = intmeta("FIRST THRU NODE")

    rows: list[TntpRow] = []
    for idx in range(body_start + 1, len(lines) + 1):
        line = lines[idx - 1].strip()
        if not line or line.startswith("~"):
            continue
        if not line.endswith(";"):
            raise TntpParseError("link row must end with ';'", idx)
        fields = line[:-1].split()
        if len(fields) != 10:
            raise TntpParseError(f"expected 10 fields, found {len(fields)}", idx)
        try:
            row = TntpRow(
                init_node=int(fields[0]),
                term_node=int(fields[1]),
                capacity=float(fields[2]),
                length=float(fields[3]),
                free_flow_time=float(fields[4]),
                b=float(fields[5]),
                power=float(fields[6]),
                speed=float(fields[7]),
                toll=float(fields[8]),
                link_type=int(float(fields[9])),
            )
        except ValueError:
            raise TntpParseError("non-numeric field in link row", idx) from None
        if not (1 <= row.init_node <= n_nodes and 1 <= row.term_node <= n_nodes):
            raise TntpParseError("node id outside the declared range", idx)
        rows.append(row)
    if len(rows) != n_links:
        raise TntpParseError(
            f"metadata declares {n_links} links but {len(rows)} rows parsed",
            len(lines),
        )
    return TntpNetworkFile(n_nodes, n_links, first_thru, tuple(rows))


def serialize_tntp(net: TntpNetworkFile) -> str:
    out = [
        f"<NUMBER OF NODES> {net.number_of_nodes}",
        f"<NUMBER OF LINKS> {net.number_of_links}",
        f"<FIRST THRU NODE> {net.first_thru_node}",
        "<END OF METADATA>",
        "~ init term capacity length fftt b power speed toll type ;",
    ]
    for r in net.rows:
        out.append(
            f"{r.init_node} {r.term_node} {FLOAT_FMT % r.capacity} "
            f"{FLOAT_FMT % r.length} {FLOAT_FMT % r.free_flow_time} "
            f"{FLOAT_FMT % r.b} {FLOAT_FMT % r.power} {FLOAT_FMT % r.speed} "
            f"{FLOAT_FMT % r.toll} {r.link_type} ;"
        )
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class DemandEntry:
    origin: int
    destination: int
    departure_time: float
    count: float


@dataclass(frozen=True)
class ScenarioConfig:
    """JSON scenario document.

    Keys: ``network_source`` (either ``{"inline": [link objects]}`` or
    ``{"tntp": "relative/path"}``), ``dt``, ``horizon``, ``n0``,
    ``demand`` (list of ``{"origin", "destination", "departure_time",
    "count"}``), optional ``omd_schedule`` as ``[[iterations, rate], ...]``
    and optional ``name``.  Demand counts must sum to ``n0``.
    """

    network_source: dict
    dt: float
    horizon: float
    n0: int
    demand: tuple[DemandEntry, ...]
    omd_schedule: OmdSchedule | None = None
    name: str = ""
    base_dir: str = "."


def load_scenario_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return scenario_config_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def scenario_config_from_dict(doc: dict, base_dir: str = ".") -> ScenarioConfig:
    missing = {"network_source", "dt", "horizon", "n0", "demand"} - doc.keys()
    if missing:
        raise ConfigError(f"missing scenario keys: {sorted(missing)}")
    demand = []
    for i, entry in enumerate(doc["demand"]):
        try:
            demand.append(
                DemandEntry(
                    origin=entry["origin"],
                    destination=entry["destination"],
                    departure_time=float(entry["departure_time"]),
                    count=float(entry["count"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"demand entry {i}: {exc!r}") from None
    schedule = None
    if "omd_schedule" in doc:
        try:
            schedule = OmdSchedule(tuple((int(n), float(lr)) for n, lr in doc["omd_schedule"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"omd_schedule: {exc}") from None
    return ScenarioConfig(
        network_source=doc["network_source"],
        dt=float(doc["dt"]),
        horizon=float(doc["horizon"]),
        n0=int(doc["n0"]),
        demand=tuple(demand),
        omd_schedule=schedule,
        name=str(doc.get("name", "")),
        base_dir=base_dir,
    )


def _congestion_from_dict(spec: dict) -> CongestionFn:
    form = spec.get("form")
    if form == "constant":
        return constant(float(spec["t0"]))
    if form == "affine":
        return affine(float(spec["t0"]), float(spec["alpha"]))
    if form == "bpr":
        return bpr(float(spec["t0"]), float(spec["alpha"]),
                   float(spec["beta"]), float(spec["rel_capacity"]))
    raise ConfigError(f"unknown congestion form {form!r}")


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Materialize a scenario: network (+ OD augmentation), time grid, and
    demand atoms with counts converted to population proportions.

    TNTP links become BPR congestion functions with the file's free-flow
    time, b and power, and a relative capacity of capacity / n0 (the
    population the function is tuned for); length and speed are carried
    but unused by the mesoscopic model.
    """
    if config.dt <= 0:
        raise ConfigError("dt must be positive")
    if config.n0 <= 0:
        raise ConfigError("n0 must be positive")
    total = sum(d.count for d in config.demand)
    if not config.demand:
        raise ConfigError("scenario needs at least one demand entry")
    if abs(total - config.n0) > 1e-9 * max(1.0, config.n0):
        raise ConfigError(f"demand counts sum to {total}, expected n0 = {config.n0}")

    source = config.network_source
    if "tntp" in source:
        path = os.path.join(config.base_dir, source["tntp"])
        try:
            with open(path, encoding="utf-8") as fh:
                parsed = parse_tntp(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read TNTP file {path}: {exc}") from None
        links = [
            (row.init_node, row.term_node,
             bpr(row.free_flow_time, row.b, row.power, row.capacity / config.n0))
            for row in parsed.rows
        ]
    elif "inline" in source:
        links = [
            (entry["tail"], entry["head"], _congestion_from_dict(entry["congestion"]))
            for entry in source["inline"]
        ]
    else:
        raise ConfigError("network_source needs an 'inline' or 'tntp' key")

    net = build_network(links)
    origins = sorted({d.origin for d in config.demand})
    destinations = sorted({d.destination for d in config.demand})
    nodes = {l.tail for l in net.links} | {l.head for l in net.links}
    for node in origins + destinations:
        if node not in nodes:
            raise ConfigError(f"demand node {node} absent from the network")
    net = augment_od(net, origins, destinations, origin_travel_time=config.dt)
    grid = TimeGrid(config.dt, config.horizon)

    atoms = []
    for d in config.demand:
        tick = int(d.departure_time / config.dt + 1e-9)  # departures floor to ticks
        if not 0 <= tick < grid.n_ticks:
            raise ConfigError(f"departure time {d.departure_time} outside the horizon")
        atoms.append(
            DemandAtom(net.origin_link(d.origin), net.destination_link(d.destination),
                       tick, d.count / config.n0)
        )
    return Scenario(net, grid, tuple(atoms), n0=config.n0,
                    name=config.name or "scenario")


# ---------------------------------------------------------------------------
# Result emission.  All CSV output: UTF-8, LF endings, 9 significant digits.


def _write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([
                    FLOAT_FMT % v if isinstance(v, float) else v for v in row
                ])
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def write_history(history: Sequence[HistoryRow], path: str) -> None:
    _write_rows(
        path,
        ["iteration", "learning_rate", "exploitability", "mean_travel_time"],
        [(h.iteration, h.learning_rate, h.exploitability, h.mean_travel_time)
         for h in history],
    )


def write_flow(flow: DistributionFlow, path: str, min_proportion: float = 1e-12) -> None:
    """Tick snapshots of the link proportions (rows carrying mass only)."""
    rows = []
    for t in range(flow.n_ticks):
        for link in range(flow.nu.shape[1]):
            v = float(flow.nu[t, link])
            if v > min_proportion:
                rows.append((t, link, v))
    _write_rows(path, ["tick", "link_id", "proportion"], rows)


def write_estimates(estimates: Sequence[tuple[int, DeviationEstimate]], path: str) -> None:
    _write_rows(
        path,
        ["n_players", "incentive", "half_width", "n_samples"],
        [(n, e.mean, e.half_width_95, e.n_samples) for n, e in estimates],
    )


def write_timings(rows: Sequence[tuple[str, int, float]], path: str) -> None:
    _write_rows(path, ["algorithm", "n_players", "seconds_per_10_iterations"], rows)


def write_policy(policy, path: str, min_prob: float = 0.0) -> None:
    """Readable JSON dump of the decision table (tick, link, destination)."""
    doc = []
    for tick, link, dest, row in policy.decision_rows():
        succ = policy.network.successors(link)
        probs = {str(s): float(p) for s, p in zip(succ, row) if p > min_prob}
        doc.append({"tick": tick, "link": link, "destination": dest, "probs": probs})
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
