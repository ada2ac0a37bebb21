"""Road network model: signalized grid generation, scenario configs, routing.

The network is a directed graph of single-lane links between nodes. Interior
nodes are signalized intersections; perimeter nodes are unsignalized sources
and sinks reached through entry/exit stub lanes. Every intersection built by
the grid generator has exactly four incoming lanes, ordered north, south,
east, west (by the compass direction the traffic arrives from), and two green
phases: north-south through and east-west through.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import os
import tempfile
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

DEFAULT_SPEED_LIMIT = 13.89     # m/s, ~50 km/h
DEFAULT_STUB_LENGTH = 200.0     # m, perimeter entry/exit links
DEFAULT_DETECTION_ZONE = 50.0   # m upstream of the stop line covered by a sensor
DEFAULT_CROSSING_DELAY = 2.0    # s spent traversing an intersection interior

APPROACH_ORDER = ("N", "S", "E", "W")


@dataclass(frozen=True)
class Lane:
    """One directed single-lane link.

    detection_zone is the stretch upstream of the stop line (at the lane end)
    that sensors and state encodings see; it never exceeds the lane length.
    """

    id: str
    from_node: str
    to_node: str
    length: float
    speed_limit: float
    detection_zone: float


@dataclass(frozen=True)
class Phase:
    """A green phase: the set of incoming lanes that may discharge."""

    index: int
    green_lanes: tuple[str, ...]


@dataclass(frozen=True)
class Intersection:
    id: str
    incoming_lanes: tuple[str, ...]   # ordered N, S, E, W
    outgoing_lanes: tuple[str, ...]   # same ordering, toward N, S, E, W
    phases: tuple[Phase, ...]
    yellow_duration: float = 3.0


@dataclass(frozen=True)
class DemandFlow:
    """Poisson vehicle demand between two nodes over a time window."""

    origin: str
    destination: str
    rate: float          # veh/hr
    start_time: float    # s
    end_time: float      # s


@dataclass
class RoadNetwork:
    lanes: dict[str, Lane]
    intersections: dict[str, Intersection]
    crossing_delay: float = DEFAULT_CROSSING_DELAY

    def __post_init__(self) -> None:
        self._out_by_node: dict[str, list[Lane]] = {}
        for lane in self.lanes.values():
            self._out_by_node.setdefault(lane.from_node, []).append(lane)
        for lanes in self._out_by_node.values():
            lanes.sort(key=lambda l: l.id)

    @property
    def nodes(self) -> set[str]:
        ns: set[str] = set()
        for lane in self.lanes.values():
            ns.add(lane.from_node)
            ns.add(lane.to_node)
        return ns

    def lanes_from(self, node: str) -> list[Lane]:
        return self._out_by_node.get(node, [])

    def is_signalized(self, node: str) -> bool:
        return node in self.intersections

    def free_flow_time(self, lane_id: str) -> float:
        lane = self.lanes[lane_id]
        return lane.length / lane.speed_limit


def _node(r: int, c: int) -> str:
    return f"J_{r}_{c}"


def _lane_id(u: str, v: str) -> str:
    return f"{u}->{v}"


def grid_generator(
    rows: int,
    cols: int,
    ew_spacing: float,
    ns_spacing: float,
    speed_limit: float = DEFAULT_SPEED_LIMIT,
    stub_length: float = DEFAULT_STUB_LENGTH,
    detection_zone: float = DEFAULT_DETECTION_ZONE,
    crossing_delay: float = DEFAULT_CROSSING_DELAY,
) -> RoadNetwork:
    """Build a rows x cols signalized grid.

    Adjacent intersections are joined by bidirectional single-lane links
    (ew_spacing apart along a row, ns_spacing along a column). Each perimeter
    intersection side gets a stub to an external source/sink node. Row 0 is
    the north edge and column 0 the west edge.

    Args:
        rows: number of intersection rows (>= 1).
        cols: number of intersection columns (>= 1).
        ew_spacing: link length between column neighbours, m.
        ns_spacing: link length between row neighbours, m.
        speed_limit: uniform lane speed limit, m/s.
        stub_length: perimeter stub lane length, m.
        detection_zone: sensor coverage upstream of each stop line, m
            (clamped to the lane length on short links).
        crossing_delay: fixed intersection traversal time, s.

    Returns:
        A RoadNetwork with one Intersection per grid node, incoming lanes
        ordered (N, S, E, W) and phases (NS-through, EW-through).
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one row and one column")
    if ew_spacing <= 0 or ns_spacing <= 0 or stub_length <= 0:
        raise ValueError("spacings and stub_length must be positive")
    if speed_limit <= 0:
        raise ValueError("speed_limit must be positive")
    if detection_zone <= 0:
        raise ValueError("detection_zone must be positive")

    lanes: dict[str, Lane] = {}

    def add_pair(u: str, v: str, length: float) -> None:
        for a, b in ((u, v), (v, u)):
            lid = _lane_id(a, b)
            lanes[lid] = Lane(
                id=lid,
                from_node=a,
                to_node=b,
                length=length,
                speed_limit=speed_limit,
                detection_zone=min(detection_zone, length),
            )

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add_pair(_node(r, c), _node(r, c + 1), ew_spacing)
            if r + 1 < rows:
                add_pair(_node(r, c), _node(r + 1, c), ns_spacing)

    for c in range(cols):
        add_pair(f"X_N_{c}", _node(0, c), stub_length)
        add_pair(f"X_S_{c}", _node(rows - 1, c), stub_length)
    for r in range(rows):
        add_pair(f"X_W_{r}", _node(r, 0), stub_length)
        add_pair(f"X_E_{r}", _node(r, cols - 1), stub_length)

    intersections: dict[str, Intersection] = {}
    for r in range(rows):
        for c in range(cols):
            me = _node(r, c)
            neighbour = {
                "N": _node(r - 1, c) if r > 0 else f"X_N_{c}",
                "S": _node(r + 1, c) if r + 1 < rows else f"X_S_{c}",
                "E": _node(r, c + 1) if c + 1 < cols else f"X_E_{r}",
                "W": _node(r, c - 1) if c > 0 else f"X_W_{r}",
            }
            incoming = tuple(_lane_id(neighbour[d], me) for d in APPROACH_ORDER)
            outgoing = tuple(_lane_id(me, neighbour[d]) for d in APPROACH_ORDER)
            phases = (
                Phase(0, (incoming[0], incoming[1])),   # NS through
                Phase(1, (incoming[2], incoming[3])),   # EW through
            )
            intersections[me] = Intersection(me, incoming, outgoing, phases)

    return RoadNetwork(lanes, intersections, crossing_delay)


def shortest_time_route(
    network: RoadNetwork,
    origin: str,
    destination: str,
    travel_times: dict[str, float] | None = None,
) -> list[str] | None:
    """Shortest-travel-time lane sequence from origin node to destination node.

    Edge weight is the per-lane travel-time estimate (free flow unless
    overridden via travel_times) plus the fixed crossing delay for every
    signalized intermediate node. Costs are quantized to nanoseconds so that
    equal-cost paths tie exactly; ties break on the lexicographically
    smallest lane-id sequence. Returns None when no path exists.
    """
    if origin == destination:
        return None
    est = travel_times or {}

    def weight_ns(lane: Lane, from_origin: bool) -> int:
        t = est.get(lane.id)
        if t is None:
            t = lane.length / lane.speed_limit
        if not from_origin and network.is_signalized(lane.from_node):
            t += network.crossing_delay
        return round(t * 1e9)

    # heap entries: (cost_ns, lane id path, node); the path in the key gives
    # the lexicographic tie-break for free
    heap: list[tuple[int, tuple[str, ...], str]] = [(0, (), origin)]
    best: dict[str, tuple[int, tuple[str, ...]]] = {}
    while heap:
        cost, path, node = heapq.heappop(heap)
        if node == destination:
            return list(path)
        seen = best.get(node)
        if seen is not None and (seen[0], seen[1]) < (cost, path):
            continue
        for lane in network.lanes_from(node):
            nc = cost + weight_ns(lane, node == origin)
            npath = path + (lane.id,)
            cur = best.get(lane.to_node)
            if cur is None or (nc, npath) < cur:
                best[lane.to_node] = (nc, npath)
                heapq.heappush(heap, (nc, npath, lane.to_node))
    return None


@dataclass
class ScenarioConfig:
    """A complete runnable scenario: network, demand and timing."""

    network: RoadNetwork
    flows: list[DemandFlow]
    name: str = "scenario"
    sim_tick: float = 0.05          # s per microsim step
    decision_period: float = 5.0    # s between controller decisions
    min_green: float = 5.0          # s a phase must hold before the flag sets
    yellow: float = 3.0             # s of yellow between distinct greens
    max_stuck: float = 60.0         # s before a forced phase change
    max_sim_time: float = 7200.0    # s hard episode cap (gridlock guard)
    grid_params: dict | None = None   # retained when built from a grid spec

    def ticks_per_decision(self) -> int:
        return int(round(self.decision_period / self.sim_tick))


def validate_scenario(config: ScenarioConfig) -> list[str]:
    """Check structural invariants; returns a list of violations (empty = ok)."""
    problems: list[str] = []
    net = config.network
    nodes = net.nodes

    if config.sim_tick <= 0:
        problems.append(f"sim_tick must be positive, got {config.sim_tick}")
    else:
        ratio = config.decision_period / config.sim_tick
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            problems.append(
                "decision_period must be a whole number of sim ticks "
                f"(decision_period={config.decision_period}, sim_tick={config.sim_tick})"
            )
    if config.yellow <= 0:
        problems.append(f"yellow must be positive, got {config.yellow}")
    if config.min_green < 0:
        problems.append(f"min_green must be non-negative, got {config.min_green}")
    if config.max_stuck <= config.min_green:
        problems.append(
            f"max_stuck ({config.max_stuck}) must exceed min_green ({config.min_green})"
        )
    if config.max_sim_time <= 0:
        problems.append("max_sim_time must be positive")

    for lane in net.lanes.values():
        if lane.length <= 0:
            problems.append(f"lane {lane.id} has non-positive length")
        if lane.speed_limit <= 0:
            problems.append(f"lane {lane.id} has non-positive speed limit")
        if not 0 < lane.detection_zone <= lane.length:
            problems.append(
                f"lane {lane.id} detection_zone {lane.detection_zone} outside (0, length]"
            )

    for node, inter in net.intersections.items():
        covered = set()
        for phase in inter.phases:
            covered.update(phase.green_lanes)
            for lid in phase.green_lanes:
                if lid not in net.lanes:
                    problems.append(f"{node} phase {phase.index} references unknown lane {lid}")
        missing = set(inter.incoming_lanes) - covered
        if missing:
            problems.append(f"{node} has incoming lanes never served: {sorted(missing)}")

    for i, flow in enumerate(config.flows):
        tag = f"flow[{i}] {flow.origin}->{flow.destination}"
        if flow.origin not in nodes:
            problems.append(f"{tag}: unknown origin node")
            continue
        if flow.destination not in nodes:
            problems.append(f"{tag}: unknown destination node")
            continue
        if flow.origin == flow.destination:
            problems.append(f"{tag}: origin equals destination")
            continue
        if flow.rate < 0:
            problems.append(f"{tag}: negative rate")
        if not 0 <= flow.start_time < flow.end_time:
            problems.append(f"{tag}: bad time window [{flow.start_time}, {flow.end_time})")
        if shortest_time_route(net, flow.origin, flow.destination) is None:
            problems.append(f"{tag}: destination unreachable")

    return problems


## ---- serialization ----------------------------------------------------

def network_to_dict(network: RoadNetwork) -> dict:
    return {
        "crossing_delay": network.crossing_delay,
        "lanes": [
            {
                "id": l.id,
                "from_node": l.from_node,
                "to_node": l.to_node,
                "length": l.length,
                "speed_limit": l.speed_limit,
                "detection_zone": l.detection_zone,
            }
            for l in sorted(network.lanes.values(), key=lambda l: l.id)
        ],
        "intersections": [
            {
                "id": i.id,
                "incoming_lanes": list(i.incoming_lanes),
                "outgoing_lanes": list(i.outgoing_lanes),
                "yellow_duration": i.yellow_duration,
                "phases": [
                    {"index": p.index, "green_lanes": list(p.green_lanes)}
                    for p in i.phases
                ],
            }
            for i in sorted(network.intersections.values(), key=lambda i: i.id)
        ],
    }


def network_from_dict(data: dict) -> RoadNetwork:
    lanes = {
        l["id"]: Lane(
            id=l["id"],
            from_node=l["from_node"],
            to_node=l["to_node"],
            length=float(l["length"]),
            speed_limit=float(l["speed_limit"]),
            detection_zone=float(l["detection_zone"]),
        )
        for l in data["lanes"]
    }
    intersections = {
        i["id"]: Intersection(
            id=i["id"],
            incoming_lanes=tuple(i["incoming_lanes"]),
            outgoing_lanes=tuple(i["outgoing_lanes"]),
            phases=tuple(
                Phase(p["index"], tuple(p["green_lanes"])) for p in i["phases"]
            ),
            yellow_duration=float(i.get("yellow_duration", 3.0)),
        )
        for i in data["intersections"]
    }
    return RoadNetwork(lanes, intersections, float(data.get("crossing_delay", DEFAULT_CROSSING_DELAY)))


def canonical_network_text(network: RoadNetwork) -> str:
    """Canonical serialization: sorted keys, no whitespace, trailing newline."""
    return json.dumps(network_to_dict(network), sort_keys=True, separators=(",", ":")) + "\n"


def network_hash(network: RoadNetwork) -> str:
    return hashlib.sha256(canonical_network_text(network).encode()).hexdigest()


def scenario_to_dict(config: ScenarioConfig) -> dict:
    data: dict = {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "timing": {
            "sim_tick": config.sim_tick,
            "decision_period": config.decision_period,
            "min_green": config.min_green,
            "yellow": config.yellow,
            "max_stuck": config.max_stuck,
        },
        "max_sim_time": config.max_sim_time,
        "flows": [
            {
                "origin": f.origin,
                "destination": f.destination,
                "rate": f.rate,
                "start_time": f.start_time,
                "end_time": f.end_time,
            }
            for f in config.flows
        ],
    }
    if config.grid_params is not None:
        data["grid"] = dict(config.grid_params)
    else:
        data["network"] = network_to_dict(config.network)
    return data


def scenario_from_dict(data: dict) -> ScenarioConfig:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported scenario schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    grid_params = None
    if "grid" in data:
        grid_params = dict(data["grid"])
        net = grid_generator(**grid_params)
    elif "network" in data:
        net = network_from_dict(data["network"])
    else:
        raise ValueError("scenario needs either a 'grid' spec or an explicit 'network'")
    timing = data.get("timing", {})
    flows = [
        DemandFlow(
            origin=f["origin"],
            destination=f["destination"],
            rate=float(f["rate"]),
            start_time=float(f["start_time"]),
            end_time=float(f["end_time"]),
        )
        for f in data.get("flows", [])
    ]
    return ScenarioConfig(
        network=net,
        flows=flows,
        name=data.get("name", "scenario"),
        sim_tick=float(timing.get("sim_tick", 0.05)),
        decision_period=float(timing.get("decision_period", 5.0)),
        min_green=float(timing.get("min_green", 5.0)),
        yellow=float(timing.get("yellow", 3.0)),
        max_stuck=float(timing.get("max_stuck", 60.0)),
        max_sim_time=float(data.get("max_sim_time", 7200.0)),
        grid_params=grid_params,
    )


def scenario_hash(config: ScenarioConfig) -> str:
    """Identity of the experiment setup: everything except the display name."""
    data = scenario_to_dict(config)
    del data["name"]
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def save_scenario(config: ScenarioConfig, path: str) -> None:
    text = json.dumps(scenario_to_dict(config), indent=2, sort_keys=True) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_scenario(path: str) -> ScenarioConfig:
    with open(path) as fh:
        data = json.load(fh)
    return scenario_from_dict(data)
