"""Time-stepped microscopic traffic simulation.

Vehicles follow a Krauss-style safe-speed rule: each tick a vehicle takes the
highest speed that respects its acceleration envelope, the lane speed limit
and a safe-speed bound guaranteeing it can always stop behind its leader (or
a stop line) using its maximum deceleration. The bound is derived for the
discrete update, so vehicles never overlap and never pass a red stop line
they arrived at with feasible braking distance.

Intersection interiors are not modelled as lanes. A vehicle granted passage
leaves its lane, spends a fixed crossing delay in transit, and is inserted at
the start of the next lane. Normal green crossings into a lane are granted
one at a time (a crossing reserves the target until the vehicle lands), which
caps discharge into any lane at roughly one vehicle per crossing delay, i.e.
about 1800 veh/h for the 2 s default. A vehicle caught by a yellow it cannot
brake for is committed and crosses unconditionally.

Position convention: a vehicle's pos is its front bumper's distance from the
lane start; the stop line sits at pos == lane length. Vehicles are inserted
with their front bumper one vehicle length into the lane. A vehicle held at
a blocked line may transiently overhang it by a short braking length; the
gap rule still prevents any overlap.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .network import RoadNetwork, ScenarioConfig, shortest_time_route
from .seeding import substream_rng

VEHICLE_LENGTH = 5.0        # m
MIN_GAP = 2.5               # m kept to the leader at standstill
ACCEL = 2.6                 # m/s^2 maximum acceleration
DECEL = 4.5                 # m/s^2 maximum braking
WAITING_THRESHOLD = 0.1     # m/s below which a vehicle counts as waiting
INSERT_POS = VEHICLE_LENGTH
CROSS_CLEARANCE = 5.0       # m of spare entry gap required before committing to cross
EMA_ALPHA = 0.1             # weight of a new sample in lane travel-time estimates

GREEN, YELLOW, RED = 0, 1, 2


class Vehicle:
    __slots__ = (
        "id", "route", "route_idx", "pos", "speed", "depart_time",
        "waiting_acc", "stop_since", "distance", "free_flow_time",
        "route_length", "lane_entry_time", "exit_speed", "origin", "destination",
        "yellow_state",
    )

    def __init__(self, vid: int, route: list[str], origin: str, destination: str,
                 free_flow_time: float, route_length: float):
        self.id = vid
        self.route = route
        self.route_idx = 0
        self.pos = 0.0
        self.speed = 0.0
        self.depart_time = 0.0
        self.waiting_acc = 0.0
        self.stop_since = -1.0        # -1 = currently moving
        self.distance = 0.0           # integrated travel distance, m
        self.free_flow_time = free_flow_time
        self.route_length = route_length
        self.lane_entry_time = 0.0
        self.exit_speed = 0.0
        self.origin = origin
        self.destination = destination
        self.yellow_state = 0         # 0 undecided, 1 committed, 2 stopping

    def waiting_time(self, now: float) -> float:
        if self.stop_since >= 0.0:
            return self.waiting_acc + (now - self.stop_since)
        return self.waiting_acc


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: int
    origin: str
    destination: str
    depart_time: float
    arrive_time: float
    duration: float
    waiting: float
    time_lost: float
    free_flow_time: float
    route_length: float
    distance: float


class _LaneState:
    __slots__ = ("lane_id", "length", "speed_limit", "detection_zone",
                 "to_signal", "vehicles")

    def __init__(self, lane_id: str, length: float, speed_limit: float,
                 detection_zone: float, to_signal: bool):
        self.lane_id = lane_id
        self.length = length
        self.speed_limit = speed_limit
        self.detection_zone = detection_zone
        self.to_signal = to_signal
        self.vehicles: list[Vehicle] = []   # index 0 = closest to the stop line


class _FlowState:
    __slots__ = ("flow", "rng", "next_time", "generated", "rate_per_s")

    def __init__(self, flow, rng: random.Random):
        self.flow = flow
        self.rng = rng
        self.rate_per_s = flow.rate / 3600.0
        self.generated = 0
        if self.rate_per_s > 0.0:
            self.next_time = flow.start_time + rng.expovariate(self.rate_per_s)
        else:
            self.next_time = math.inf


class SimState:
    """One running simulation: vehicles, lanes, demand and the clock."""

    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.network: RoadNetwork = config.network
        self.seed = seed
        self.clock = 0.0
        self.dt = config.sim_tick
        self.crossing_delay = self.network.crossing_delay

        self.lanes: dict[str, _LaneState] = {}
        signal_nodes = self.network.intersections.keys()
        for lid in sorted(self.network.lanes):
            lane = self.network.lanes[lid]
            self.lanes[lid] = _LaneState(
                lid, lane.length, lane.speed_limit, lane.detection_zone,
                lane.to_node in signal_nodes,
            )
        self._lane_list = list(self.lanes.values())

        self.flows = [
            _FlowState(flow, substream_rng(seed, "flow", i))
            for i, flow in enumerate(config.flows)
        ]
        self.pending: dict[str, deque[Vehicle]] = {}
        self.transits: list[list] = []      # [ready_time, seq, vehicle, to_lane]
        self.reserved: dict[str, int] = {}  # lane id -> vehicles in flight toward it
        self.ema: dict[str, float] = {
            lid: self.network.free_flow_time(lid) for lid in self.lanes
        }
        self.trips: list[TripRecord] = []
        self.next_vid = 0
        self._transit_seq = 0
        self.generated_count = 0
        self.inserted_count = 0
        self.no_route_count = 0

    ## ---- demand ---------------------------------------------------------

    def _route_free_flow(self, route: list[str]) -> float:
        net = self.network
        t = sum(net.free_flow_time(lid) for lid in route)
        for lid in route[:-1]:
            if net.is_signalized(net.lanes[lid].to_node):
                t += self.crossing_delay
        return t

    def _generate_arrivals(self) -> None:
        now = self.clock
        for fs in self.flows:
            flow = fs.flow
            while fs.next_time <= now and fs.next_time < flow.end_time:
                fs.next_time += fs.rng.expovariate(fs.rate_per_s)
                route = shortest_time_route(
                    self.network, flow.origin, flow.destination, self.ema
                )
                if route is None:
                    self.no_route_count += 1
                    continue
                length = sum(self.network.lanes[lid].length for lid in route)
                veh = Vehicle(self.next_vid, route, flow.origin, flow.destination,
                              self._route_free_flow(route), length)
                self.next_vid += 1
                fs.generated += 1
                self.generated_count += 1
                self.pending.setdefault(route[0], deque()).append(veh)

    def _entry_gap(self, ls: _LaneState) -> float:
        if not ls.vehicles:
            return ls.length - INSERT_POS
        rear = ls.vehicles[-1]
        return rear.pos - VEHICLE_LENGTH - MIN_GAP - INSERT_POS

    def _insert(self, ls: _LaneState, veh: Vehicle, desired_speed: float) -> None:
        gap = self._entry_gap(ls)
        if ls.vehicles:
            safe = self._vsafe(gap, ls.vehicles[-1].speed)
        else:
            safe = ls.speed_limit
        veh.pos = INSERT_POS
        veh.speed = min(desired_speed, ls.speed_limit, safe)
        veh.lane_entry_time = self.clock
        if veh.speed < WAITING_THRESHOLD:
            veh.stop_since = self.clock
        else:
            veh.stop_since = -1.0
        ls.vehicles.append(veh)

    def _process_spawns(self) -> None:
        if not self.pending:
            return
        done_lanes = []
        for lid in sorted(self.pending):
            queue = self.pending[lid]
            ls = self.lanes[lid]
            if queue and self._entry_gap(ls) >= 0.0:
                veh = queue.popleft()
                veh.depart_time = self.clock
                self._insert(ls, veh, ls.speed_limit)
                self.inserted_count += 1
            if not queue:
                done_lanes.append(lid)
        for lid in done_lanes:
            del self.pending[lid]

    def _process_transits(self) -> None:
        if not self.transits:
            return
        now = self.clock
        kept = []
        for entry in self.transits:
            ready, _, veh, to_lane = entry
            if ready > now:
                kept.append(entry)
                continue
            ls = self.lanes[to_lane]
            if self._entry_gap(ls) >= 0.0:
                self._insert(ls, veh, veh.exit_speed)
                left = self.reserved.get(to_lane, 0) - 1
                if left > 0:
                    self.reserved[to_lane] = left
                else:
                    self.reserved.pop(to_lane, None)
            else:
                kept.append(entry)
        self.transits = kept

    ## ---- dynamics -------------------------------------------------------

    def _vsafe(self, gap: float, leader_speed: float) -> float:
        # highest speed that can still stop behind the leader's worst-case
        # stopping point, for the discrete update with reaction time dt
        if gap <= 0.0:
            return 0.0
        bt = DECEL * self.dt
        return -bt + math.sqrt(bt * bt + leader_speed * leader_speed + 2.0 * DECEL * gap)

    def step(self, aspects: dict[str, int] | None = None) -> None:
        """Advance one tick. aspects maps signal-controlled lane ids to
        GREEN/YELLOW/RED; lanes absent from the map have a free exit."""
        if aspects is None:
            aspects = {}
        self._process_transits()
        self._generate_arrivals()
        self._process_spawns()

        dt = self.dt
        now = self.clock
        end = now + dt
        sqrt = math.sqrt
        bt = DECEL * dt
        btsq = bt * bt
        twob = 2.0 * DECEL
        adt = ACCEL * dt
        reserved = self.reserved
        lanes = self.lanes
        thr = WAITING_THRESHOLD

        for ls in self._lane_list:
            vehicles = ls.vehicles
            if not vehicles:
                continue
            length = ls.length
            vmax = ls.speed_limit
            aspect = aspects.get(ls.lane_id, GREEN) if ls.to_signal else GREEN

            leader: Vehicle | None = None
            i = 0
            while i < len(vehicles):
                veh = vehicles[i]
                v = veh.speed
                if leader is None:
                    # front vehicle: stop line / crossing logic
                    last_lane = veh.route_idx == len(veh.route) - 1
                    to_lane = None
                    if last_lane:
                        can_go = True
                    elif aspect == GREEN:
                        to_lane = veh.route[veh.route_idx + 1]
                        can_go = (reserved.get(to_lane, 0) == 0
                                  and self._entry_gap(lanes[to_lane]) >= CROSS_CLEARANCE)
                        veh.yellow_state = 0
                    elif aspect == YELLOW:
                        # the stop-or-commit choice is made once, on first sight
                        # of the yellow; re-deciding every tick would let a
                        # cruising vehicle defer braking until it drifted past
                        # the point of no return
                        to_lane = veh.route[veh.route_idx + 1]
                        if veh.yellow_state == 0:
                            infeasible = v * v > twob * (length - veh.pos)
                            veh.yellow_state = 1 if infeasible else 2
                        can_go = (veh.yellow_state == 1
                                  and reserved.get(to_lane, 0) == 0
                                  and self._entry_gap(lanes[to_lane]) >= CROSS_CLEARANCE)
                    else:
                        can_go = False
                        veh.yellow_state = 0
                    if can_go:
                        safe = vmax
                    else:
                        gap = length - veh.pos
                        safe = 0.0 if gap <= 0.0 else -bt + sqrt(btsq + twob * gap)
                else:
                    gap = leader.pos - VEHICLE_LENGTH - MIN_GAP - veh.pos
                    if gap <= 0.0:
                        safe = 0.0
                    else:
                        lv = leader.speed
                        safe = -bt + sqrt(btsq + lv * lv + twob * gap)
                    can_go = False
                    last_lane = False

                nv = v + adt
                if nv > vmax:
                    nv = vmax
                if nv > safe:
                    nv = safe
                floor = v - bt
                if nv < floor:
                    nv = floor
                if nv < 0.0:
                    nv = 0.0
                veh.speed = nv
                veh.pos += nv * dt
                veh.distance += nv * dt

                # waiting bookkeeping: a tick counts when it ends below the
                # threshold; stop_since marks the start of that tick
                if nv < thr:
                    if veh.stop_since < 0.0:
                        veh.stop_since = now
                elif veh.stop_since >= 0.0:
                    veh.waiting_acc += now - veh.stop_since
                    veh.stop_since = -1.0

                if leader is None and can_go and veh.pos >= length:
                    vehicles.pop(i)
                    self._lane_exit(ls, veh, end)
                    if last_lane:
                        self._finish_trip(veh, end)
                    else:
                        veh.route_idx += 1
                        veh.exit_speed = veh.speed
                        reserved[to_lane] = reserved.get(to_lane, 0) + 1
                        self._transit_seq += 1
                        self.transits.append(
                            [end + self.crossing_delay, self._transit_seq, veh, to_lane]
                        )
                    # the next vehicle becomes the front of the lane
                    continue
                leader = veh
                i += 1

        self.clock = end

    def _lane_exit(self, ls: _LaneState, veh: Vehicle, now: float) -> None:
        sample = now - veh.lane_entry_time
        self.ema[ls.lane_id] = (1.0 - EMA_ALPHA) * self.ema[ls.lane_id] + EMA_ALPHA * sample

    def _finish_trip(self, veh: Vehicle, now: float) -> None:
        if veh.stop_since >= 0.0:
            veh.waiting_acc += (now - self.dt) - veh.stop_since
            veh.stop_since = -1.0
        duration = now - veh.depart_time
        self.trips.append(TripRecord(
            vehicle_id=veh.id,
            origin=veh.origin,
            destination=veh.destination,
            depart_time=veh.depart_time,
            arrive_time=now,
            duration=duration,
            waiting=veh.waiting_acc,
            # lost time includes waiting time, so waiting is its floor
            time_lost=max(0.0, duration - veh.free_flow_time, veh.waiting_acc),
            free_flow_time=veh.free_flow_time,
            route_length=veh.route_length,
            distance=veh.distance,
        ))

    ## ---- queries --------------------------------------------------------

    def active_count(self) -> int:
        n = sum(len(ls.vehicles) for ls in self._lane_list)
        return n + len(self.transits)

    def pending_count(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def demand_exhausted(self) -> bool:
        return all(fs.next_time >= fs.flow.end_time or fs.rate_per_s == 0.0
                   for fs in self.flows)

    def done(self) -> bool:
        return (self.demand_exhausted() and self.active_count() == 0
                and self.pending_count() == 0)

    def lane_ground_truth(self, lane_id: str, zone: float | None = None) -> tuple[int, int]:
        """(occupancy, queue) within the detection zone upstream of the line."""
        ls = self.lanes[lane_id]
        cutoff = ls.length - (zone if zone is not None else ls.detection_zone)
        occ = 0
        queue = 0
        for veh in ls.vehicles:
            if veh.pos >= cutoff:
                occ += 1
                if veh.speed < WAITING_THRESHOLD:
                    queue += 1
        return occ, queue

    def lane_count(self, lane_id: str) -> int:
        return len(self.lanes[lane_id].vehicles)

    def lane_stopped_count(self, lane_id: str) -> int:
        return sum(1 for v in self.lanes[lane_id].vehicles if v.speed < WAITING_THRESHOLD)

    def lane_waiting_sum(self, lane_id: str) -> float:
        now = self.clock
        return sum(v.waiting_time(now) for v in self.lanes[lane_id].vehicles)

    def lane_presence(self, lane_id: str, zone: float) -> bool:
        ls = self.lanes[lane_id]
        cutoff = ls.length - zone
        return any(v.pos >= cutoff for v in ls.vehicles)

    def speeds_on(self, lane_ids) -> list[tuple[float, float]]:
        """(speed, speed_limit) pairs for every vehicle on the given lanes."""
        out = []
        for lid in lane_ids:
            ls = self.lanes[lid]
            limit = ls.speed_limit
            for v in ls.vehicles:
                out.append((v.speed, limit))
        return out

    def network_stopped_count(self) -> int:
        return sum(self.lane_stopped_count(lid) for lid in self.lanes)

    def unfinished_snapshot(self) -> list[tuple[int, float, float]]:
        """(vehicle_id, elapsed, distance) for vehicles still on the road."""
        now = self.clock
        out = []
        for ls in self._lane_list:
            for v in ls.vehicles:
                out.append((v.id, now - v.depart_time, v.distance))
        for _, _, v, _ in self.transits:
            out.append((v.id, now - v.depart_time, v.distance))
        return sorted(out)

    def iter_vehicles(self):
        for ls in self._lane_list:
            for v in ls.vehicles:
                yield ls.lane_id, v
