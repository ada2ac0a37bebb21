"""Experiment orchestration: scenario loading, training and evaluation runs,
noise calibration, comparisons, and deterministic CSV artifacts.

Artifact discipline: no timestamps, canonical float repr, sorted iteration,
write-then-rename. Rerunning any command with identical inputs reproduces
every output byte for byte.
"""

from __future__ import annotations

import csv
import io
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .agents import load_tables, save_tables
from .metrics import (REPORT_METRICS, MetricsReport, compare_reports,
                      compute_report)
from .network import (ScenarioConfig, load_scenario, network_hash,
                      scenario_hash, validate_scenario)
from .perception import (BUILTIN_PROFILES, CalibrationError, NoiseProfile,
                         calibrate_profile, error_stats, load_profile,
                         save_profile)
from .rewards import REWARDS
from .runner import RunOptions, run_actuated, run_agents, run_static, train
from .scenarios import BUILTIN_SCENARIOS, builtin_scenario

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
WORKERS_ENV = "TRAFFICLAB_WORKERS"


@dataclass
class ExperimentSpec:
    """Everything one command needs; all fields are plain strings/numbers so
    specs can cross process boundaries for parallel seed fan-out."""

    scenario: str
    controller: str = "static"        # static | actuated | agents:<tables file>
    sensing: str = "ground_truth"     # ground_truth | <profile file>
    reward: str = "avg_speed"
    episodes: int = 300
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "results"


def resolve_scenario(arg: str) -> ScenarioConfig:
    """A built-in scenario name, or a path to a scenario file."""
    if arg in BUILTIN_SCENARIOS:
        return builtin_scenario(arg)
    if os.path.exists(arg):
        return load_scenario(arg)
    raise ValueError(
        f"unknown scenario {arg!r}: not a file and not one of "
        f"{', '.join(sorted(BUILTIN_SCENARIOS))}"
    )


def resolve_sensing(arg: str) -> NoiseProfile:
    if arg in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[arg]
    if os.path.exists(arg):
        return load_profile(arg)
    names = ", ".join(sorted(BUILTIN_PROFILES))
    raise ValueError(f"sensing must be one of {names} or a profile file, got {arg!r}")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


## ---- deterministic CSV ------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        ## plain-float repr even for numpy scalars, which subclass float
        return repr(float(value))
    return str(value)


def write_csv(path: str, header, rows) -> None:
    """Atomic CSV write with unix line endings regardless of platform."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


## ---- train -------------------------------------------------------------------

def _train_one_seed(spec: ExperimentSpec, seed: int) -> dict[str, str]:
    scenario = resolve_scenario(spec.scenario)
    result = train(scenario, spec.reward, spec.episodes, seed)
    result.tables.extra = {
        "scenario": scenario.name,
        "scenario_hash": scenario_hash(scenario),
        "seed": seed,
    }
    tables_path = os.path.join(
        spec.out_dir, f"qtables_{spec.reward}_seed{seed}.json")
    os.makedirs(spec.out_dir, exist_ok=True)
    save_tables(result.tables, tables_path)

    intersection_ids = sorted(scenario.network.intersections)
    header = ["episode", "mean_system_speed"] + [
        f"wait_{iid}" for iid in intersection_ids]
    rows = [
        [p.episode, p.mean_system_speed] + [p.mean_wait[iid]
                                            for iid in intersection_ids]
        for p in result.curve
    ]
    curve_path = os.path.join(
        spec.out_dir, f"learning_curve_{spec.reward}_seed{seed}.csv")
    write_csv(curve_path, header, rows)
    return {"tables": tables_path, "curve": curve_path}


def cmd_train(spec: ExperimentSpec) -> list[dict[str, str]]:
    """One training run per seed; emits Q-tables and a learning curve each."""
    if spec.reward not in REWARDS:
        raise ValueError(
            f"unknown reward {spec.reward!r}; choose one of "
            f"{', '.join(sorted(REWARDS))}"
        )
    resolve_scenario(spec.scenario)   # fail fast before any work
    seeds = sorted(spec.seeds)
    workers = worker_count()
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_one_seed, [spec] * len(seeds), seeds))
    return [_train_one_seed(spec, seed) for seed in seeds]


## ---- evaluate ------------------------------------------------------------------

def _parse_controller(controller: str) -> tuple[str, str | None]:
    if controller in ("static", "actuated"):
        return controller, None
    if controller.startswith("agents:"):
        path = controller.split(":", 1)[1]
        if not path:
            raise ValueError("agents controller needs a table file: agents:<path>")
        return "agents", path
    raise ValueError(
        f"unknown controller {controller!r}; use static, actuated or agents:<path>")


def _evaluate_one_seed(spec: ExperimentSpec, seed: int) -> dict:
    scenario = resolve_scenario(spec.scenario)
    profile = resolve_sensing(spec.sensing)
    kind, tables_path = _parse_controller(spec.controller)
    options = RunOptions(
        sensing=profile,
        collect_signal_trace=True,
        collect_error_streams=not profile.is_ground_truth,
    )
    if kind == "static":
        result = run_static(scenario, seed, options=options)
    elif kind == "actuated":
        result = run_actuated(scenario, seed, options=options)
    else:
        tables = load_tables(tables_path,
                             expected_network_hash=network_hash(scenario.network))
        result = run_agents(scenario, seed, tables, options=options)
    report = compute_report(result.trips, result.unfinished,
                            scenario_hash=scenario_hash(scenario))
    return {
        "seed": seed,
        "report": report,
        "trace": result.signal_trace,
        "noisy_stream": result.noisy_stream,
        "truth_stream": result.truth_stream,
        "truncated": result.truncated,
        "forced_changes": result.forced_changes,
    }


def _report_row(label, report: MetricsReport) -> list:
    return ([label] + [getattr(report, m) for m in REPORT_METRICS]
            + [report.trips_completed, report.trips_unfinished,
               report.scenario_hash or ""])


REPORT_HEADER = (["seed"] + list(REPORT_METRICS)
                 + ["trips_completed", "trips_unfinished", "scenario_hash"])


def _aggregate_rows(reports: list[MetricsReport]) -> list[list]:
    rows = []
    for label, fn in (("mean", statistics.fmean), ("stdev", _stdev)):
        rows.append(
            [label]
            + [fn([getattr(r, m) for r in reports]) for m in REPORT_METRICS]
            + [fn([float(r.trips_completed) for r in reports]),
               fn([float(r.trips_unfinished) for r in reports]),
               reports[0].scenario_hash or ""]
        )
    return rows


def _stdev(values) -> float:
    if len(values) < 2:
        return 0.0
    return statistics.stdev(values)


def cmd_evaluate(spec: ExperimentSpec) -> dict[str, str]:
    """One simulation per seed; aggregate report plus per-seed signal traces
    and, under noisy sensing, pooled detection-error statistics."""
    resolve_scenario(spec.scenario)
    resolve_sensing(spec.sensing)
    _parse_controller(spec.controller)
    seeds = sorted(spec.seeds)
    workers = worker_count()
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_evaluate_one_seed,
                                     [spec] * len(seeds), seeds))
    else:
        outcomes = [_evaluate_one_seed(spec, seed) for seed in seeds]

    os.makedirs(spec.out_dir, exist_ok=True)
    artifacts: dict[str, str] = {}
    rows = [_report_row(o["seed"], o["report"]) for o in outcomes]
    rows.extend(_aggregate_rows([o["report"] for o in outcomes]))
    report_path = os.path.join(spec.out_dir, "report.csv")
    write_csv(report_path, REPORT_HEADER, rows)
    artifacts["report"] = report_path

    for o in outcomes:
        trace_path = os.path.join(spec.out_dir, f"trace_seed{o['seed']}.csv")
        write_csv(trace_path,
                  ["clock", "intersection", "phase", "in_yellow", "forced"],
                  o["trace"])
        artifacts[f"trace_seed{o['seed']}"] = trace_path

    if outcomes[0]["noisy_stream"] is not None:
        noisy = []
        truth = []
        for o in outcomes:
            noisy.extend(o["noisy_stream"])
            truth.extend(o["truth_stream"])
        stats = error_stats(noisy, truth)
        stats_path = os.path.join(spec.out_dir, "error_stats.csv")
        write_csv(stats_path, ["n_snapshots", "mae", "rmse", "mean_error"],
                  [[stats.n_snapshots, stats.mae, stats.rmse, stats.mean_error]])
        hist_path = os.path.join(spec.out_dir, "error_hist.csv")
        write_csv(hist_path, ["error_value", "frequency"],
                  sorted(stats.histogram.items()))
        artifacts["error_stats"] = stats_path
        artifacts["error_hist"] = hist_path
    return artifacts


## ---- calibrate -----------------------------------------------------------------

def cmd_calibrate(target_mae: float, target_rmse: float, target_mean: float,
                  lanes: int, name: str, out_dir: str,
                  snapshots: int = 20000, seed: int = 1234) -> dict[str, str]:
    """Fit a noise profile to the targets; writes the profile and a residual
    report. Raises CalibrationError (with best-found residuals) on failure."""
    result = calibrate_profile(target_mae, target_rmse, target_mean, lanes,
                               name=name, seed=seed, snapshots=snapshots)
    os.makedirs(out_dir, exist_ok=True)
    profile_path = os.path.join(out_dir, f"profile_{name}.json")
    save_profile(result.profile, profile_path)
    residual_path = os.path.join(out_dir, f"calibration_{name}.csv")
    write_csv(
        residual_path,
        ["stat", "target", "achieved", "residual"],
        [
            ["mae", target_mae, result.mae, result.residuals["mae"]],
            ["rmse", target_rmse, result.rmse, result.residuals["rmse"]],
            ["mean_error", target_mean, result.mean_error,
             result.residuals["mean"]],
            ["snapshots", snapshots, result.snapshots, 0],
        ],
    )
    return {"profile": profile_path, "residuals": residual_path}


## ---- compare -------------------------------------------------------------------

def read_report_row(path: str, label: str = "mean") -> MetricsReport:
    """Rehydrate one row of a report.csv (default: the aggregate mean)."""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["seed"] == str(label):
                return MetricsReport(
                    mean_speed=float(row["mean_speed"]),
                    total_travel_time=float(row["total_travel_time"]),
                    mean_waiting_time=float(row["mean_waiting_time"]),
                    mean_time_lost=float(row["mean_time_lost"]),
                    mean_trip_duration=float(row["mean_trip_duration"]),
                    trips_completed=int(round(float(row["trips_completed"]))),
                    trips_unfinished=int(round(float(row["trips_unfinished"]))),
                    scenario_hash=row["scenario_hash"] or None,
                )
    raise ValueError(f"no row labeled {label!r} in {path}")


def cmd_compare(baseline_path: str, candidate_path: str,
                out_path: str | None = None) -> dict[str, float]:
    baseline = read_report_row(baseline_path)
    candidate = read_report_row(candidate_path)
    deltas = compare_reports(baseline, candidate)
    if out_path is not None:
        write_csv(out_path, ["metric", "delta_pct"],
                  [[m, deltas[m]] for m in REPORT_METRICS])
    return deltas


## ---- validate ------------------------------------------------------------------

def cmd_validate(scenario_arg: str) -> list[str]:
    scenario = resolve_scenario(scenario_arg)
    return validate_scenario(scenario)
