"""Per-intersection reward functions, computed from ground-truth sim state.

All four operate on a RewardContext snapshot taken at a decision boundary.
The differenced waiting reward needs the snapshot from the previous decision;
its sign is chosen so that a decreasing total wait yields a positive reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RewardContext:
    intersection_id: str
    incoming_lanes: tuple[str, ...]
    outgoing_lanes: tuple[str, ...]
    waiting_sum: float                    # sum of accumulated waiting, incoming lanes
    prev_waiting_sum: float | None        # same sum at the previous decision, None at first
    stopped_in: tuple[int, ...]           # stopped vehicles per incoming lane (full lane)
    count_in: int                         # vehicles on incoming lanes
    count_out: int                        # vehicles on outgoing lanes
    speeds: list = field(default_factory=list)   # (speed, speed_limit) pairs in the vicinity


def diff_waiting_reward(ctx: RewardContext) -> float:
    """Previous total waiting minus current; first call returns 0."""
    if ctx.prev_waiting_sum is None:
        return 0.0
    return ctx.prev_waiting_sum - ctx.waiting_sum


def average_speed_reward(ctx: RewardContext) -> float:
    """Mean speed over vehicles near the intersection, normalized by the
    speed limit. No vehicles means free flow, rewarded as 1.0."""
    if not ctx.speeds:
        return 1.0
    return sum(v / limit for v, limit in ctx.speeds) / len(ctx.speeds)


def queue_reward(ctx: RewardContext) -> float:
    return -float(sum(ctx.stopped_in))


def pressure_reward(ctx: RewardContext) -> float:
    """Vehicles leaving minus vehicles approaching; discharging is positive."""
    return float(ctx.count_out - ctx.count_in)


REWARDS = {
    "diff_wait": diff_waiting_reward,
    "avg_speed": average_speed_reward,
    "queue": queue_reward,
    "pressure": pressure_reward,
}


def get_reward(name: str):
    try:
        return REWARDS[name]
    except KeyError:
        raise ValueError(
            f"unknown reward {name!r}; choose one of {', '.join(sorted(REWARDS))}"
        ) from None


def build_context(
    sim,
    intersection,
    prev_waiting_sum: float | None,
) -> RewardContext:
    """Assemble a RewardContext for one intersection from live sim state.

    The vicinity for the speed term is every vehicle on the incoming and
    outgoing lanes. Waiting and stopped counts cover whole incoming lanes,
    not just detection zones.
    """
    incoming = intersection.incoming_lanes
    outgoing = intersection.outgoing_lanes
    waiting = sum(sim.lane_waiting_sum(lid) for lid in incoming)
    stopped = tuple(sim.lane_stopped_count(lid) for lid in incoming)
    count_in = sum(sim.lane_count(lid) for lid in incoming)
    count_out = sum(sim.lane_count(lid) for lid in outgoing)
    speeds = sim.speeds_on(incoming) + sim.speeds_on(outgoing)
    return RewardContext(
        intersection_id=intersection.id,
        incoming_lanes=incoming,
        outgoing_lanes=outgoing,
        waiting_sum=waiting,
        prev_waiting_sum=prev_waiting_sum,
        stopped_in=stopped,
        count_in=count_in,
        count_out=count_out,
        speeds=speeds,
    )
