"""Episode execution: one deterministic loop tying together the microsim,
signal controllers, perception and agents.

The loop advances the simulation tick by tick, runs the per-intersection
watchdog every tick (except in training, where the agent must be the sole
phase authority so that holding a phase too long carries its real cost),
lets per-tick controllers (fixed-time, gap-actuated) act continuously, and
services agent controllers at decision boundaries (every decision_period):
batched capture, state encoding, action lookup or learning update, phase
request. Lane aspects passed to the microsim are rebuilt only for
intersections whose signal state changed.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

from .agents import (AgentParams, QTable, TableSet, act_deployment,
                     encode_state, epsilon_schedule, q_update, select_action)
from .metrics import compute_report
from .microsim import GREEN, RED, YELLOW, SimState
from .network import ScenarioConfig, network_hash
from .perception import GROUND_TRUTH, CaptureSession, NoiseProfile
from .rewards import build_context, get_reward
from .seeding import substream_rng, substream_seed
from .signal_control import (ActuatedController, FixedTimeController,
                             FixedTimePlan, SignalControllerState,
                             make_controller_state, min_green_flag,
                             request_phase, watchdog_tick)

log = logging.getLogger(__name__)


@dataclass
class RunOptions:
    """Switches for optional per-run logging; all off by default."""

    sensing: NoiseProfile = GROUND_TRUTH
    collect_signal_trace: bool = False
    collect_observations: bool = False
    collect_error_streams: bool = False


@dataclass
class EpisodeResult:
    trips: list
    unfinished: list
    duration: float
    truncated: bool
    mean_system_speed: float
    intersection_waits: dict[str, float]
    decision_rounds: int
    forced_changes: int
    ## optional logs, present when the matching RunOptions flag was set
    signal_trace: list | None = None
    observations: list | None = None
    network_samples: list | None = None
    noisy_stream: list | None = None
    truth_stream: list | None = None


@dataclass
class EpisodeCurvePoint:
    episode: int
    mean_system_speed: float
    mean_wait: dict[str, float]
    rounds: int
    trips_completed: int
    epsilon: float
    truncated: bool


@dataclass
class TrainResult:
    tables: TableSet
    curve: list[EpisodeCurvePoint]
    total_rounds: int


def default_static_plan(intersection, green: float = 22.0) -> FixedTimePlan:
    """Equal-split fixed plan; two phases at the defaults give a 50 s cycle."""
    n = len(intersection.phases)
    cycle = n * (green + intersection.yellow_duration)
    return FixedTimePlan(greens=(green,) * n,
                         yellow=intersection.yellow_duration, cycle=cycle)


class _LoopState:
    """Per-run machinery shared by the loop and the controller callbacks:
    the sim, controller states, cached lane aspects, and optional logs."""

    def __init__(self, scenario: ScenarioConfig, seed: int, options: RunOptions,
                 enforce_watchdog: bool = True):
        self.scenario = scenario
        self.options = options
        self.enforce_watchdog = enforce_watchdog
        self.sim = SimState(scenario, seed)
        network = scenario.network
        self.intersections = [network.intersections[iid]
                              for iid in sorted(network.intersections)]
        self.ctrls: dict[str, SignalControllerState] = {}
        for inter in self.intersections:
            self.ctrls[inter.id] = make_controller_state(
                inter, min_green=scenario.min_green,
                max_stuck=scenario.max_stuck)
        self.aspects: dict[str, int] = {}
        self._signatures: dict[str, tuple[int, bool]] = {}
        for inter in self.intersections:
            self._refresh_aspects(inter)
        self.forced_changes = 0
        self.trace = [] if options.collect_signal_trace else None
        if self.trace is not None:
            for inter in self.intersections:
                ctrl = self.ctrls[inter.id]
                self.trace.append((0.0, inter.id, ctrl.current_phase, 0, 0))
        self.observations = [] if options.collect_observations else None
        self.network_samples = [] if options.collect_observations else None

    def _refresh_aspects(self, inter) -> None:
        ctrl = self.ctrls[inter.id]
        green_lanes = inter.phases[ctrl.current_phase].green_lanes
        shown = YELLOW if ctrl.in_yellow else GREEN
        for lane_id in inter.incoming_lanes:
            self.aspects[lane_id] = shown if lane_id in green_lanes else RED
        self._signatures[inter.id] = (ctrl.current_phase, ctrl.in_yellow)

    def tick(self, now: float) -> None:
        """One sim tick followed by signal-timer upkeep at time `now`."""
        self.sim.step(self.aspects)
        for inter in self.intersections:
            ctrl = self.ctrls[inter.id]
            forced = watchdog_tick(ctrl, self.scenario.sim_tick,
                                   enforce=self.enforce_watchdog)
            if forced:
                self.forced_changes += 1
            if (ctrl.current_phase, ctrl.in_yellow) != self._signatures[inter.id]:
                self._refresh_aspects(inter)
                if self.trace is not None:
                    self.trace.append((now, inter.id, ctrl.current_phase,
                                       int(ctrl.in_yellow), int(forced)))

    def request(self, inter, target: int, now: float) -> None:
        """request_phase plus aspect/trace upkeep when the state changed."""
        ctrl = self.ctrls[inter.id]
        before = (ctrl.current_phase, ctrl.in_yellow)
        request_phase(ctrl, target)
        if (ctrl.current_phase, ctrl.in_yellow) != before:
            self._refresh_aspects(inter)
            if self.trace is not None:
                self.trace.append((now, inter.id, ctrl.current_phase,
                                   int(ctrl.in_yellow), 0))


def _run_loop(scenario: ScenarioConfig, seed: int, options: RunOptions,
              boundary=None, per_tick=None,
              enforce_watchdog: bool = True) -> EpisodeResult:
    """Drive one episode. `boundary(now, loop)` fires every decision period
    (including t = 0), `per_tick(now, loop)` after every tick."""
    loop = _LoopState(scenario, seed, options, enforce_watchdog)
    sim = loop.sim
    ticks_per_decision = scenario.ticks_per_decision()
    tick_limit = int(round(scenario.max_sim_time / scenario.sim_tick))
    dt = scenario.sim_tick

    wait_sums = {inter.id: 0.0 for inter in loop.intersections}
    rounds = 0

    def service_boundary(now: float) -> None:
        nonlocal rounds
        if boundary is not None:
            boundary(now, loop)
        for inter in loop.intersections:
            wait_sums[inter.id] += sum(
                sim.lane_waiting_sum(lid) for lid in inter.incoming_lanes)
        if loop.network_samples is not None:
            loop.network_samples.append(
                (now, sim.network_stopped_count(), sim.active_count()))
        rounds += 1

    service_boundary(0.0)
    n = 0
    truncated = False
    while True:
        if sim.done():
            break
        if n >= tick_limit:
            ## the cap exists to cut off gridlocked runs; early training
            ## episodes hit it routinely, so callers get a flag and a debug
            ## line rather than a warning per episode
            truncated = True
            log.debug(
                "episode truncated at %.0f s with %d vehicles still active",
                sim.clock, sim.active_count() + sim.pending_count())
            break
        n += 1
        now = n * dt
        loop.tick(now)
        if per_tick is not None:
            per_tick(now, loop)
        if n % ticks_per_decision == 0:
            service_boundary(now)

    trips = sim.trips
    unfinished = sim.unfinished_snapshot()
    return EpisodeResult(
        trips=trips,
        unfinished=unfinished,
        duration=sim.clock,
        truncated=truncated,
        mean_system_speed=compute_report(trips, unfinished).mean_speed,
        intersection_waits={k: v / rounds for k, v in wait_sums.items()},
        decision_rounds=rounds,
        forced_changes=loop.forced_changes,
        signal_trace=loop.trace,
        observations=loop.observations,
        network_samples=loop.network_samples,
    )


## ---- baseline controllers -------------------------------------------------

def run_static(scenario: ScenarioConfig, seed: int,
               plans: dict[str, FixedTimePlan] | None = None,
               options: RunOptions | None = None) -> EpisodeResult:
    """Fixed-time plans throughout; the default is an equal 22 s split."""
    network = scenario.network
    controllers = {
        iid: FixedTimeController((plans or {}).get(iid)
                                 or default_static_plan(inter))
        for iid, inter in network.intersections.items()
    }

    def per_tick(now, loop):
        for inter in loop.intersections:
            ctrl = loop.ctrls[inter.id]
            target = controllers[inter.id].decide(ctrl, False)
            if target is not None:
                loop.request(inter, target, now)

    return _run_loop(scenario, seed, options or RunOptions(),
                     per_tick=per_tick)


def run_actuated(scenario: ScenarioConfig, seed: int,
                 controller_factory=None,
                 options: RunOptions | None = None) -> EpisodeResult:
    """Gap-actuated control: green extends while arrivals keep coming."""
    network = scenario.network
    controllers = {
        iid: controller_factory(inter) if controller_factory
        else ActuatedController()
        for iid, inter in network.intersections.items()
    }

    def per_tick(now, loop):
        sim = loop.sim
        for inter in loop.intersections:
            ctrl = loop.ctrls[inter.id]
            actuated = controllers[inter.id]
            if ctrl.in_yellow:
                presence = False
            else:
                green_lanes = inter.phases[ctrl.current_phase].green_lanes
                presence = any(
                    sim.lane_presence(lid, actuated.actuation_zone)
                    for lid in green_lanes)
            target = actuated.decide(ctrl, presence)
            if target is not None:
                loop.request(inter, target, now)

    return _run_loop(scenario, seed, options or RunOptions(),
                     per_tick=per_tick)


## ---- agent controllers ----------------------------------------------------

def _capture_round(loop, session: CaptureSession, now: float,
                   noisy_stream=None, truth_stream=None):
    """One coherent network snapshot, split per intersection.

    Returns {intersection id: readings in incoming-lane order} and feeds the
    optional observation log and error-stat streams.
    """
    sim = loop.sim
    per_intersection = {}
    for inter in loop.intersections:
        readings = session.capture(sim, inter.incoming_lanes, now)
        per_intersection[inter.id] = readings
        if loop.observations is not None:
            for r in readings:
                loop.observations.append((now, inter.id, r.lane_id,
                                          r.occupancy, r.queue, int(r.stale)))
    if noisy_stream is not None:
        noisy = {}
        truth = {}
        for readings in per_intersection.values():
            for r in readings:
                noisy[r.lane_id] = r.occupancy
                truth[r.lane_id] = sim.lane_ground_truth(r.lane_id)[0]
        noisy_stream.append((now, noisy))
        truth_stream.append((now, truth))
    return per_intersection


def run_agents(scenario: ScenarioConfig, seed: int, tables: TableSet,
               options: RunOptions | None = None) -> EpisodeResult:
    """Deployment: greedy table lookups; unseen states take no action and
    the per-intersection watchdog covers phase lock-in."""
    options = options or RunOptions()
    expected = network_hash(scenario.network)
    if tables.network_hash != expected:
        raise ValueError(
            f"Q-tables were trained on network {tables.network_hash[:12]}, "
            f"scenario has {expected[:12]}")
    for iid, inter in scenario.network.intersections.items():
        order = tables.lane_orders.get(iid)
        if order is not None and tuple(order) != tuple(inter.incoming_lanes):
            raise ValueError(f"lane order mismatch for {iid}: table has {order}")
    session = CaptureSession(options.sensing, seed)
    cap = tables.params.count_cap
    noisy_stream = [] if options.collect_error_streams else None
    truth_stream = [] if options.collect_error_streams else None

    def boundary(now, loop):
        per_inter = _capture_round(loop, session, now, noisy_stream,
                                   truth_stream)
        for inter in loop.intersections:
            table = tables.tables.get(inter.id)
            if table is None:
                continue
            ctrl = loop.ctrls[inter.id]
            state = encode_state(ctrl.current_phase, min_green_flag(ctrl),
                                 per_inter[inter.id], inter.incoming_lanes,
                                 cap)
            action = act_deployment(table, state)
            if action is not None:
                loop.request(inter, action, now)

    result = _run_loop(scenario, seed, options, boundary=boundary)
    result.noisy_stream = noisy_stream
    result.truth_stream = truth_stream
    return result


def train(scenario: ScenarioConfig, reward_name: str, episodes: int,
          seed: int, params: AgentParams | None = None,
          progress=None) -> TrainResult:
    """Train one Q-table per intersection over repeated episodes.

    Every episode replays the scenario with a fresh arrival substream while
    the Q-tables persist. Agents observe ground truth; the reward for the
    action taken at decision time t is collected one decision period later,
    together with the update toward the state observed then. Exploration
    decays per decision round on a schedule spanning all episodes, and no
    watchdog interferes with the chosen actions. progress, when given, is
    called with each EpisodeCurvePoint as it is produced.
    """
    params = params or AgentParams()
    if params.decay_episodes is None:
        params = dataclasses.replace(params, decay_episodes=episodes)
    reward_fn = get_reward(reward_name)
    network = scenario.network
    intersections = {iid: network.intersections[iid]
                     for iid in sorted(network.intersections)}
    tables = {iid: QTable(len(inter.phases))
              for iid, inter in intersections.items()}
    action_rngs = {iid: substream_rng(seed, "explore", iid)
                   for iid in intersections}
    cap = params.count_cap
    global_step = 0
    curve: list[EpisodeCurvePoint] = []

    for episode in range(episodes):
        session = CaptureSession(GROUND_TRUTH, seed)
        prev_state = {iid: None for iid in intersections}
        prev_action = {iid: None for iid in intersections}
        prev_waiting = {iid: None for iid in intersections}
        round_idx = 0
        epsilon = epsilon_schedule(episode, 0, params)

        def boundary(now, loop):
            nonlocal global_step, round_idx, epsilon
            epsilon = epsilon_schedule(episode, round_idx, params)
            per_inter = _capture_round(loop, session, now)
            for iid, inter in intersections.items():
                ctrl = loop.ctrls[iid]
                table = tables[iid]
                state = encode_state(ctrl.current_phase, min_green_flag(ctrl),
                                     per_inter[iid], inter.incoming_lanes, cap)
                ctx = build_context(loop.sim, inter, prev_waiting[iid])
                if prev_state[iid] is not None:
                    reward = reward_fn(ctx)
                    q_update(table, prev_state[iid], prev_action[iid], reward,
                             state, params.alpha, params.gamma)
                action = select_action(table, state, epsilon, action_rngs[iid])
                loop.request(inter, action, now)
                prev_state[iid] = state
                prev_action[iid] = action
                prev_waiting[iid] = ctx.waiting_sum
            global_step += 1
            round_idx += 1

        episode_seed = substream_seed(seed, "episode", episode)
        result = _run_loop(scenario, episode_seed, RunOptions(),
                           boundary=boundary, enforce_watchdog=False)
        point = EpisodeCurvePoint(
            episode=episode,
            mean_system_speed=result.mean_system_speed,
            mean_wait=result.intersection_waits,
            rounds=result.decision_rounds,
            trips_completed=len(result.trips),
            epsilon=epsilon,
            truncated=result.truncated,
        )
        curve.append(point)
        if progress is not None:
            progress(point)

    table_set = TableSet(
        tables=tables,
        lane_orders={iid: tuple(inter.incoming_lanes)
                     for iid, inter in intersections.items()},
        reward=reward_name,
        network_hash=network_hash(network),
        params=params,
        episodes_trained=episodes,
    )
    return TrainResult(tables=table_set, curve=curve, total_rounds=global_step)
