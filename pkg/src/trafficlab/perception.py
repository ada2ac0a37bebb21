"""Observation layer: per-lane count sensing with a calibrated error model.

Counts come from periodic coherent snapshots of every monitored lane. A
noise profile corrupts them the way a camera-based detector would: occasional
over-counts (more common), occasional under-counts, and whole-capture drops
that fall back to the last known reading. Per-lane randomness is drawn from
substreams keyed on (seed, capture_time, lane), so captures are reproducible
and order-independent.

Calibration fits the four noise parameters so that the distribution of the
network-total count error per snapshot matches target MAE/RMSE/mean values
over synthetic snapshots.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .seeding import substream_rng

PROFILE_VERSION = 1
MAGNITUDE_MAX = 3   # over/under-count magnitudes live on {1, .., MAGNITUDE_MAX}


@dataclass(frozen=True)
class SensorReading:
    lane_id: str
    capture_time: float
    occupancy: int
    queue: int
    stale: bool = False


@dataclass(frozen=True)
class NoiseProfile:
    """Additive count-error model for one detector generation.

    Magnitudes follow a truncated geometric law on {1..3}: P(k) proportional
    to ratio^(k-1). ratio 0 means always magnitude 1.
    """

    name: str
    over_count_rate: float = 0.0
    over_ratio: float = 0.5
    under_count_rate: float = 0.0
    under_ratio: float = 0.5
    drop_rate: float = 0.0

    def __post_init__(self) -> None:
        for label in ("over_count_rate", "under_count_rate", "drop_rate"):
            v = getattr(self, label)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{label} must be a probability, got {v}")
        if self.over_count_rate + self.under_count_rate > 1.0:
            raise ValueError("over_count_rate + under_count_rate exceeds 1")
        for label in ("over_ratio", "under_ratio"):
            v = getattr(self, label)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{label} must be in [0, 1], got {v}")

    @property
    def is_ground_truth(self) -> bool:
        return (self.over_count_rate == 0.0 and self.under_count_rate == 0.0
                and self.drop_rate == 0.0)


GROUND_TRUTH = NoiseProfile(name="ground_truth")

## Two builtin detector generations, fitted with calibrate_profile against
## network-level error statistics measured on a 43-approach deployment.
## v5 is the older camera model: MAE 2.21, RMSE 3.48 vehicles per snapshot,
## mean error +0.8 (it over-counts). v8 is the newer one: 1.73 / 2.80 / +0.5.
## calibrate_profile(2.21, 3.48, 0.8, lanes=43, name="v5") reproduces the
## v5 numbers at its default seed and snapshot count; likewise for v8 with
## (1.73, 2.80, 0.5).
V5_PROFILE = NoiseProfile(
    name="v5",
    over_count_rate=0.022088,
    over_ratio=0.54518,
    under_count_rate=0.011957,
    under_ratio=0.55865,
    drop_rate=0.00591,
)
V8_PROFILE = NoiseProfile(
    name="v8",
    over_count_rate=0.028392,
    over_ratio=0.100067,
    under_count_rate=0.01893,
    under_ratio=0.077667,
    drop_rate=0.004169,
)
BUILTIN_PROFILES = {
    p.name: p for p in (GROUND_TRUTH, V5_PROFILE, V8_PROFILE)
}


def _magnitude_cdf(ratio: float) -> tuple[float, float]:
    # cumulative split points of the truncated geometric on {1, 2, 3}
    w1, w2, w3 = 1.0, ratio, ratio * ratio
    total = w1 + w2 + w3
    return w1 / total, (w1 + w2) / total


def _sample_magnitude(u: float, ratio: float) -> int:
    c1, c2 = _magnitude_cdf(ratio)
    if u < c1:
        return 1
    if u < c2:
        return 2
    return 3


def _sample_error(rng, profile: NoiseProfile) -> int:
    u = rng.random()
    if u < profile.over_count_rate:
        return _sample_magnitude(rng.random(), profile.over_ratio)
    if u < profile.over_count_rate + profile.under_count_rate:
        return -_sample_magnitude(rng.random(), profile.under_ratio)
    return 0


class CaptureSession:
    """Stateful capture pipeline for one run: holds last-known readings."""

    def __init__(self, profile: NoiseProfile, seed: int):
        self.profile = profile
        self.seed = seed
        self.last: dict[str, SensorReading] = {}

    def capture(self, sim, lane_ids, capture_time: float) -> list[SensorReading]:
        return batched_capture(sim, lane_ids, self.profile, self.seed,
                               capture_time, self.last)


def batched_capture(
    sim,
    lane_ids,
    profile: NoiseProfile,
    seed: int,
    capture_time: float,
    last_readings: dict[str, SensorReading],
) -> list[SensorReading]:
    """One coherent snapshot over all monitored lanes.

    A dropped lane replays its previous reading (zeros if there is none yet)
    with stale=True. Otherwise ground truth is perturbed by independently
    sampled occupancy and queue errors, clamped so counts stay non-negative
    and queue never exceeds occupancy. last_readings is updated in place.
    """
    readings: list[SensorReading] = []
    identity = profile.is_ground_truth
    time_key = f"{capture_time:.2f}"
    for lane_id in lane_ids:
        occ, queue = sim.lane_ground_truth(lane_id)
        if identity:
            reading = SensorReading(lane_id, capture_time, occ, queue, False)
        else:
            rng = substream_rng(seed, "capture", time_key, lane_id)
            if rng.random() < profile.drop_rate:
                prev = last_readings.get(lane_id)
                if prev is None:
                    reading = SensorReading(lane_id, capture_time, 0, 0, True)
                else:
                    reading = SensorReading(lane_id, capture_time,
                                            prev.occupancy, prev.queue, True)
            else:
                noisy_occ = max(0, occ + _sample_error(rng, profile))
                noisy_queue = max(0, queue + _sample_error(rng, profile))
                if noisy_queue > noisy_occ:
                    noisy_queue = noisy_occ
                reading = SensorReading(lane_id, capture_time, noisy_occ,
                                        noisy_queue, False)
        last_readings[lane_id] = reading
        readings.append(reading)
    return readings


## ---- error statistics ---------------------------------------------------

@dataclass(frozen=True)
class NetworkErrorStats:
    n_snapshots: int
    mae: float
    rmse: float
    mean_error: float
    histogram: dict[int, int]   # network-total error -> snapshot count

    def __post_init__(self) -> None:
        if self.n_snapshots and self.rmse < self.mae - 1e-12:
            raise ValueError("rmse cannot be below mae")


def error_stats(noisy_snapshots, truth_snapshots) -> NetworkErrorStats:
    """Aggregate per-snapshot network-total occupancy errors.

    Both arguments are sequences of (capture_time, {lane_id: occupancy});
    they must align pairwise on capture_time and lane set.
    """
    if len(noisy_snapshots) != len(truth_snapshots):
        raise ValueError(
            f"snapshot streams differ in length: {len(noisy_snapshots)} vs "
            f"{len(truth_snapshots)}"
        )
    totals = []
    histogram: dict[int, int] = {}
    for (t_noisy, noisy), (t_truth, truth) in zip(noisy_snapshots, truth_snapshots):
        if abs(t_noisy - t_truth) > 1e-9:
            raise ValueError(
                f"misaligned snapshots: capture times {t_noisy} vs {t_truth}"
            )
        if set(noisy) != set(truth):
            raise ValueError(f"lane sets differ at capture_time {t_noisy}")
        err = sum(noisy[l] - truth[l] for l in noisy)
        totals.append(err)
        histogram[err] = histogram.get(err, 0) + 1
    if not totals:
        return NetworkErrorStats(0, 0.0, 0.0, 0.0, {})
    n = len(totals)
    mae = sum(abs(e) for e in totals) / n
    rmse = math.sqrt(sum(e * e for e in totals) / n)
    mean = sum(totals) / n
    return NetworkErrorStats(n, mae, rmse, mean, dict(sorted(histogram.items())))


## ---- calibration ----------------------------------------------------------

## Synthetic ground truth for calibration snapshots. Most approaches idle at
## a low count, a minority are congested with long queues; the bursty mixture
## matters because a dropped capture on a congested lane replays a stale
## count and produces a rare large error, which is what gives the network
## error distribution its heavy tails (MAE well below 0.8 * RMSE).
SYNTHETIC_FREE_MEAN = 3.0
SYNTHETIC_CONGESTED_MEAN = 12.0
SYNTHETIC_CONGESTED_FRAC = 0.15


def synthetic_lane_counts(rng: np.random.Generator, snapshots: int,
                          lanes: int) -> np.ndarray:
    congested = rng.random((snapshots, lanes)) < SYNTHETIC_CONGESTED_FRAC
    means = np.where(congested, SYNTHETIC_CONGESTED_MEAN, SYNTHETIC_FREE_MEAN)
    return rng.poisson(means)


class CalibrationError(ValueError):
    def __init__(self, message: str, best_profile: NoiseProfile, residuals: dict):
        super().__init__(message)
        self.best_profile = best_profile
        self.residuals = residuals


@dataclass(frozen=True)
class CalibrationResult:
    profile: NoiseProfile
    mae: float
    rmse: float
    mean_error: float
    residuals: dict
    snapshots: int


class _CalibrationDraws:
    """Common random numbers shared by every candidate evaluation.

    truth_prev plus its own additive-noise draws stand in for the previous
    reading that a dropped capture replays (consecutive drops are rare enough
    at the fitted rates to ignore).
    """

    def __init__(self, rng: np.random.Generator, snapshots: int, lanes: int):
        self.truth = synthetic_lane_counts(rng, snapshots, lanes)
        self.truth_prev = synthetic_lane_counts(rng, snapshots, lanes)
        self.u_kind = rng.random((snapshots, lanes))
        self.u_mag = rng.random((snapshots, lanes))
        self.u_kind_prev = rng.random((snapshots, lanes))
        self.u_mag_prev = rng.random((snapshots, lanes))
        self.u_drop = rng.random((snapshots, lanes))

    def subsample(self, snapshots: int) -> "_CalibrationDraws":
        sub = object.__new__(_CalibrationDraws)
        for field in ("truth", "truth_prev", "u_kind", "u_mag",
                      "u_kind_prev", "u_mag_prev", "u_drop"):
            setattr(sub, field, getattr(self, field)[:snapshots])
        return sub


def _additive_errors(params, truth, u_kind, u_mag) -> np.ndarray:
    p_over, over_ratio, p_under, under_ratio = params
    c1o, c2o = _magnitude_cdf(over_ratio)
    c1u, c2u = _magnitude_cdf(under_ratio)
    mag_over = np.where(u_mag < c1o, 1, np.where(u_mag < c2o, 2, 3))
    mag_under = np.where(u_mag < c1u, 1, np.where(u_mag < c2u, 2, 3))
    err = np.where(
        u_kind < p_over, mag_over,
        np.where(u_kind < p_over + p_under, -mag_under, 0),
    )
    return np.maximum(err, -truth)   # a count cannot drop below zero


def _simulate_totals(params, draws: _CalibrationDraws) -> np.ndarray:
    """Vectorized network-total errors for one candidate parameter set."""
    additive = params[:4]
    drop_rate = params[4]
    err = _additive_errors(additive, draws.truth, draws.u_kind, draws.u_mag)
    if drop_rate > 0.0:
        prev_err = _additive_errors(additive, draws.truth_prev,
                                    draws.u_kind_prev, draws.u_mag_prev)
        stale_reading = draws.truth_prev + prev_err
        err = np.where(draws.u_drop < drop_rate,
                       stale_reading - draws.truth, err)
    return err.sum(axis=1)


def _stats_of(totals: np.ndarray) -> tuple[float, float, float]:
    mae = float(np.mean(np.abs(totals)))
    rmse = float(np.sqrt(np.mean(totals.astype(np.float64) ** 2)))
    mean = float(np.mean(totals))
    return mae, rmse, mean


def _relative_deviations(stats, targets) -> tuple[float, float, float]:
    # the mean is a skew-steering input, so its deviation is scored on the
    # same absolute scale as the MAE rather than relative to itself
    mae, rmse, mean = stats
    t_mae, t_rmse, t_mean = targets
    return (abs(mae - t_mae) / t_mae,
            abs(rmse - t_rmse) / t_rmse,
            abs(mean - t_mean) / t_mae)


## search domain: (over_rate, over_ratio, under_rate, under_ratio, drop_rate)
_PARAM_BOUNDS = ((0.0, 0.5), (0.0, 1.0), (0.0, 0.5), (0.0, 1.0), (0.0, 0.2))


def calibrate_profile(
    target_mae: float,
    target_rmse: float,
    target_mean: float,
    lanes: int,
    name: str = "calibrated",
    seed: int = 1234,
    snapshots: int = 20000,
    tolerance: float = 0.05,
) -> CalibrationResult:
    """Fit noise parameters to network-level error targets.

    Coarse grid search on a snapshot subsample seeds a Nelder-Mead polish of
    the squared relative deviations over the full set, all evaluated with
    common random numbers so the objective is smooth in the parameters.
    Success requires MAE and RMSE within the relative tolerance; the mean
    target steers the fit and its sign must be reproduced (that is the skew
    property the mean encodes, and the only aspect of it treated as hard).

    Raises CalibrationError with the best-found residuals when no parameter
    set satisfies those conditions.
    """
    if target_mae == 0 and target_rmse == 0 and target_mean == 0:
        # degenerate request: exact ground truth
        profile = NoiseProfile(name=name)
        return CalibrationResult(profile, 0.0, 0.0, 0.0,
                                 {"mae": 0.0, "rmse": 0.0, "mean": 0.0}, 0)
    if not target_rmse >= target_mae > 0:
        raise ValueError(
            f"need target_rmse >= target_mae > 0, got mae={target_mae}, "
            f"rmse={target_rmse}"
        )
    if lanes < 1:
        raise ValueError("lanes must be >= 1")

    rng = np.random.default_rng(seed)
    draws = _CalibrationDraws(rng, snapshots, lanes)
    coarse = draws.subsample(max(2000, snapshots // 5))
    targets = (target_mae, target_rmse, target_mean)

    best_params = None
    best_score = math.inf
    for p_over in np.linspace(0.004, 0.08, 9):
        for p_under in (0.0, 0.005, 0.015, 0.03):
            for ratio in (0.1, 0.5, 0.9):
                for p_drop in (0.0, 0.002, 0.005, 0.01, 0.02):
                    params = (float(p_over), ratio, float(p_under), ratio,
                              float(p_drop))
                    score = max(_relative_deviations(
                        _stats_of(_simulate_totals(params, coarse)), targets))
                    if score < best_score:
                        best_score = score
                        best_params = params

    def squared_loss(x):
        for v, (lo, hi) in zip(x, _PARAM_BOUNDS):
            if not lo <= v <= hi:
                return 1e6
        stats = _stats_of(_simulate_totals(tuple(x), draws))
        return sum(d * d for d in _relative_deviations(stats, targets))

    polished = optimize.minimize(
        squared_loss, list(best_params), method="Nelder-Mead",
        options={"xatol": 1e-5, "fatol": 1e-9, "maxfev": 600},
    )
    final = tuple(round(float(v), 6) for v in polished.x)
    mae, rmse, mean = _stats_of(_simulate_totals(final, draws))
    residuals = {
        "mae": mae - target_mae,
        "rmse": rmse - target_rmse,
        "mean": mean - target_mean,
    }
    profile = NoiseProfile(
        name=name,
        over_count_rate=final[0],
        over_ratio=final[1],
        under_count_rate=final[2],
        under_ratio=final[3],
        drop_rate=final[4],
    )
    ok = (abs(residuals["mae"]) <= tolerance * target_mae
          and abs(residuals["rmse"]) <= tolerance * target_rmse)
    if target_mean > 0:
        ok = ok and mean > 0
    elif target_mean < 0:
        ok = ok and mean < 0
    if not ok:
        raise CalibrationError(
            f"calibration missed targets: achieved mae={mae:.3f} "
            f"rmse={rmse:.3f} mean={mean:.3f} vs targets {targets}",
            profile, residuals,
        )
    return CalibrationResult(profile, mae, rmse, mean, residuals, snapshots)


def synthetic_replay_stats(
    profile: NoiseProfile,
    lanes: int,
    snapshots: int,
    seed: int,
) -> NetworkErrorStats:
    """Replay a profile through the real capture path on synthetic truth.

    This is the independent check on calibration: it exercises
    batched_capture + error_stats rather than the calibrator's internal
    vectorized model.
    """
    rng = np.random.default_rng(seed)
    truth_counts = synthetic_lane_counts(rng, snapshots, lanes)
    lane_ids = [f"syn_{i:03d}" for i in range(lanes)]
    index = {lid: i for i, lid in enumerate(lane_ids)}

    class _FakeSim:
        __slots__ = ("row",)

        def __init__(self):
            self.row = None

        def lane_ground_truth(self, lane_id, zone=None):
            return int(self.row[index[lane_id]]), 0

    state = _FakeSim()
    last: dict[str, SensorReading] = {}
    noisy_stream = []
    truth_stream = []
    for k in range(snapshots):
        state.row = truth_counts[k]
        t = float(k)
        readings = batched_capture(state, lane_ids, profile, seed, t, last)
        noisy_stream.append((t, {r.lane_id: r.occupancy for r in readings}))
        truth_stream.append((t, {lid: int(truth_counts[k][index[lid]])
                                 for lid in lane_ids}))
    return error_stats(noisy_stream, truth_stream)


## ---- profile files --------------------------------------------------------

def profile_to_dict(profile: NoiseProfile) -> dict:
    return {
        "schema_version": PROFILE_VERSION,
        "name": profile.name,
        "over_count_rate": profile.over_count_rate,
        "over_magnitude": {"kind": "trunc_geom", "ratio": profile.over_ratio,
                           "max": MAGNITUDE_MAX},
        "under_count_rate": profile.under_count_rate,
        "under_magnitude": {"kind": "trunc_geom", "ratio": profile.under_ratio,
                            "max": MAGNITUDE_MAX},
        "drop_rate": profile.drop_rate,
    }


def profile_from_dict(data: dict) -> NoiseProfile:
    version = data.get("schema_version")
    if version != PROFILE_VERSION:
        raise ValueError(f"unsupported noise-profile schema_version {version!r}")
    return NoiseProfile(
        name=data["name"],
        over_count_rate=float(data["over_count_rate"]),
        over_ratio=float(data["over_magnitude"]["ratio"]),
        under_count_rate=float(data["under_count_rate"]),
        under_ratio=float(data["under_magnitude"]["ratio"]),
        drop_rate=float(data.get("drop_rate", 0.0)),
    )


def save_profile(profile: NoiseProfile, path: str) -> None:
    text = json.dumps(profile_to_dict(profile), indent=2, sort_keys=True) + "\n"
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


def load_profile(path: str) -> NoiseProfile:
    with open(path) as fh:
        return profile_from_dict(json.load(fh))
