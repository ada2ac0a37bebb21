"""Measures of effectiveness over trips, plus capacity and level-of-service.

Reports summarize completed trips; vehicles still on the road at the horizon
contribute elapsed time and distance but are counted separately so truncated
runs cannot silently dilute the means. Mean speed is defined as total
distance over total vehicle-time (space-mean over the whole run).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

## v/C upper bounds for levels of service A..E, inclusive (a ratio of
## exactly 0.60 is still A); F is everything above 1.00
LOS_THRESHOLDS = (0.60, 0.70, 0.80, 0.85, 1.00)
LOS_LETTERS = ("A", "B", "C", "D", "E", "F")

#: the five headline metrics, in export order, followed by the counts
REPORT_METRICS = ("mean_speed", "total_travel_time", "mean_waiting_time",
                  "mean_time_lost", "mean_trip_duration")


@dataclass(frozen=True)
class MetricsReport:
    mean_speed: float
    total_travel_time: float
    mean_waiting_time: float
    mean_time_lost: float
    mean_trip_duration: float
    trips_completed: int
    trips_unfinished: int
    scenario_hash: str | None = None


def compute_report(trips, unfinished=(), scenario_hash=None) -> MetricsReport:
    """Aggregate trip records into a report.

    Args:
        trips: completed TripRecord sequence.
        unfinished: (vehicle_id, elapsed_seconds, distance_m) tuples for
            vehicles still en route when the run ended.
        scenario_hash: optional identity guard carried into comparisons.

    Returns:
        MetricsReport with zeros when there are no trips at all.
    """
    n = len(trips)
    completed_time = sum(t.duration for t in trips)
    total_time = completed_time + sum(elapsed for _, elapsed, _ in unfinished)
    total_distance = (sum(t.distance for t in trips)
                      + sum(distance for _, _, distance in unfinished))
    mean_speed = total_distance / total_time if total_time > 0 else 0.0
    if n == 0:
        return MetricsReport(mean_speed, total_time, 0.0, 0.0, 0.0,
                             0, len(unfinished), scenario_hash)
    return MetricsReport(
        mean_speed=mean_speed,
        total_travel_time=total_time,
        mean_waiting_time=sum(t.waiting for t in trips) / n,
        mean_time_lost=sum(t.time_lost for t in trips) / n,
        mean_trip_duration=completed_time / n,
        trips_completed=n,
        trips_unfinished=len(unfinished),
        scenario_hash=scenario_hash,
    )


def v_over_c(demand: float, sat_flow: float, green: float,
             cycle: float) -> tuple[float, str]:
    """Volume-to-capacity ratio and its level-of-service letter.

    Args:
        demand: arriving volume in veh/h.
        sat_flow: saturation flow of the approach in veh/h of green.
        green: effective green seconds per cycle.
        cycle: cycle length in seconds.

    Returns:
        (ratio, letter) where ratio = demand / (sat_flow * green / cycle).
    """
    if demand <= 0 or sat_flow <= 0 or green <= 0 or cycle <= 0:
        raise ValueError("demand, sat_flow, green and cycle must be positive")
    ratio = demand / (sat_flow * green / cycle)
    for letter, threshold in zip(LOS_LETTERS, LOS_THRESHOLDS):
        if ratio <= threshold:
            return ratio, letter
    return ratio, LOS_LETTERS[-1]


def compare_reports(baseline: MetricsReport,
                    candidate: MetricsReport) -> dict[str, float]:
    """Signed percentage change per metric, candidate relative to baseline.

    Both reports must describe the same scenario when they carry identity
    hashes. A metric at baseline zero maps to 0.0 when unchanged and to
    signed infinity otherwise.
    """
    if (baseline.scenario_hash is not None and candidate.scenario_hash is not None
            and baseline.scenario_hash != candidate.scenario_hash):
        raise ValueError(
            "reports describe different scenarios: "
            f"{baseline.scenario_hash[:12]} vs {candidate.scenario_hash[:12]}"
        )
    deltas = {}
    for metric in REPORT_METRICS:
        base = getattr(baseline, metric)
        cand = getattr(candidate, metric)
        if base == 0:
            deltas[metric] = 0.0 if cand == 0 else math.copysign(math.inf, cand)
        else:
            deltas[metric] = (cand - base) / base * 100.0
    return deltas


def report_to_dict(report: MetricsReport) -> dict:
    data = {m: getattr(report, m) for m in REPORT_METRICS}
    data["trips_completed"] = report.trips_completed
    data["trips_unfinished"] = report.trips_unfinished
    if report.scenario_hash is not None:
        data["scenario_hash"] = report.scenario_hash
    return data
