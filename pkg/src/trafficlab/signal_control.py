"""Signal state machines and baseline controllers.

A controller owns one intersection. Phase changes never jump between greens
directly: a request enters a yellow interval first, and the target phase
starts once the yellow completes. A watchdog forces the modular next phase
whenever a green has been held longer than max_stuck, so no approach can be
starved forever regardless of who is issuing requests.
"""

from __future__ import annotations

from dataclasses import dataclass

from .network import Intersection

_EPS = 1e-9

DEFAULT_GAP_THRESHOLD = 3.0    # s without an arrival before an actuated green ends
DEFAULT_MAX_GREEN = 60.0       # s cap on an actuated green
DEFAULT_ACTUATION_ZONE = 20.0  # m upstream of the stop line watched for arrivals


@dataclass
class SignalControllerState:
    intersection_id: str
    n_phases: int
    min_green: float = 5.0
    yellow: float = 3.0
    max_stuck: float = 60.0
    current_phase: int = 0
    in_yellow: bool = False
    yellow_elapsed: float = 0.0
    phase_elapsed: float = 0.0
    pending_phase: int | None = None


def make_controller_state(
    intersection: Intersection,
    min_green: float = 5.0,
    yellow: float = 3.0,
    max_stuck: float = 60.0,
) -> SignalControllerState:
    return SignalControllerState(
        intersection_id=intersection.id,
        n_phases=len(intersection.phases),
        min_green=min_green,
        yellow=yellow,
        max_stuck=max_stuck,
    )


def request_phase(ctrl: SignalControllerState, target: int) -> None:
    """Ask for a green phase.

    Requesting the current phase outside yellow is a no-op. Any other request
    starts a yellow interval; a request landing mid-yellow replaces the
    pending target rather than queueing a second transition.
    """
    if not 0 <= target < ctrl.n_phases:
        raise ValueError(
            f"{ctrl.intersection_id}: phase {target} out of range 0..{ctrl.n_phases - 1}"
        )
    if ctrl.in_yellow:
        ctrl.pending_phase = target
        return
    if target == ctrl.current_phase:
        return
    ctrl.in_yellow = True
    ctrl.yellow_elapsed = 0.0
    ctrl.pending_phase = target


def watchdog_tick(ctrl: SignalControllerState, dt: float,
                  enforce: bool = True) -> bool:
    """Advance the controller by dt; returns True when a change was forced.

    Completes a running yellow (switching to the pending phase and resetting
    phase_elapsed) and, outside yellow, forces the modular next phase once
    phase_elapsed strictly exceeds max_stuck. With enforce False only the
    timers advance: a phase may then be held indefinitely, which training
    relies on so that the cost of never switching is actually experienced.
    """
    if ctrl.in_yellow:
        ctrl.yellow_elapsed += dt
        if ctrl.yellow_elapsed >= ctrl.yellow - _EPS:
            ctrl.current_phase = ctrl.pending_phase if ctrl.pending_phase is not None else ctrl.current_phase
            ctrl.pending_phase = None
            ctrl.in_yellow = False
            ctrl.yellow_elapsed = 0.0
            ctrl.phase_elapsed = 0.0
        return False
    ctrl.phase_elapsed += dt
    if enforce and ctrl.phase_elapsed > ctrl.max_stuck + _EPS:
        request_phase(ctrl, (ctrl.current_phase + 1) % ctrl.n_phases)
        return True
    return False


def min_green_flag(ctrl: SignalControllerState) -> bool:
    """The boolean agents observe: held at least min_green and not in yellow."""
    return (not ctrl.in_yellow) and ctrl.phase_elapsed >= ctrl.min_green - _EPS


def lane_signal(ctrl: SignalControllerState, intersection: Intersection, lane_id: str) -> str:
    """Signal aspect shown to one incoming lane: 'green', 'yellow' or 'red'."""
    green = intersection.phases[ctrl.current_phase].green_lanes
    if lane_id in green:
        return "yellow" if ctrl.in_yellow else "green"
    return "red"


@dataclass(frozen=True)
class FixedTimePlan:
    """Fixed-time plan: per-phase green durations and a shared yellow."""

    greens: tuple[float, ...]
    yellow: float
    cycle: float

    def __post_init__(self) -> None:
        total = sum(self.greens) + len(self.greens) * self.yellow
        if abs(total - self.cycle) > 1e-6:
            raise ValueError(
                f"greens {self.greens} + {len(self.greens)} yellows of {self.yellow} "
                f"sum to {total}, not the declared cycle {self.cycle}"
            )


class FixedTimeController:
    """Runs a FixedTimePlan: hold each green for its slot, then rotate."""

    def __init__(self, plan: FixedTimePlan):
        self.plan = plan

    def decide(self, ctrl: SignalControllerState, presence: bool) -> int | None:
        if ctrl.in_yellow:
            return None
        if ctrl.phase_elapsed >= self.plan.greens[ctrl.current_phase] - _EPS:
            return (ctrl.current_phase + 1) % ctrl.n_phases
        return None


class ActuatedController:
    """Gap-actuated control: extend the green while arrivals keep coming.

    An arrival is a vehicle present in the actuation zone of any lane served
    by the current green. The green ends when no arrival has been seen for
    gap_threshold seconds once min_green has elapsed, or at max_green. On an
    empty network phases therefore rotate every min_green + gap_threshold
    seconds of green plus the yellow.
    """

    def __init__(
        self,
        gap_threshold: float = DEFAULT_GAP_THRESHOLD,
        max_green: float = DEFAULT_MAX_GREEN,
        actuation_zone: float = DEFAULT_ACTUATION_ZONE,
    ):
        self.gap_threshold = gap_threshold
        self.max_green = max_green
        self.actuation_zone = actuation_zone
        self._last_arrival: float | None = None

    def decide(self, ctrl: SignalControllerState, presence: bool) -> int | None:
        if ctrl.in_yellow:
            self._last_arrival = None
            return None
        if presence:
            self._last_arrival = ctrl.phase_elapsed
        if ctrl.phase_elapsed >= self.max_green - _EPS:
            return (ctrl.current_phase + 1) % ctrl.n_phases
        if ctrl.phase_elapsed < ctrl.min_green - _EPS:
            return None
        # the gap clock starts at min_green or at the latest arrival,
        # whichever came later
        reference = ctrl.min_green
        if self._last_arrival is not None and self._last_arrival > reference:
            reference = self._last_arrival
        if ctrl.phase_elapsed - reference >= self.gap_threshold - _EPS:
            return (ctrl.current_phase + 1) % ctrl.n_phases
        return None
