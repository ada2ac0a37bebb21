"""End-to-end acceptance checks for the shipped benchmark claims.

Each test covers one numbered claim and prints a single PASS/FAIL line with
the measured values. The heavyweight fixtures (multi-seed training runs) are
session-scoped and shared across tests, so run the file as a whole:

    pytest -m acceptance tests/test_acceptance.py -v

The full set trains 20 agent populations and takes on the order of an hour
on one core.
"""

from __future__ import annotations

import copy
import math
import random
import time

import pytest

from trafficlab.agents import (AgentParams, QTable, act_deployment,
                               encode_state, q_update)
from trafficlab.harness import ExperimentSpec, cmd_evaluate, cmd_train
from trafficlab.metrics import compute_report, v_over_c
from trafficlab.perception import (BUILTIN_PROFILES, GROUND_TRUTH,
                                   CaptureSession, NoiseProfile,
                                   synthetic_replay_stats)
from trafficlab.runner import (RunOptions, _capture_round, _run_loop,
                               run_actuated, run_agents, run_static, train)
from trafficlab.scenarios import builtin_scenario
from trafficlab.signal_control import min_green_flag

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
EPISODES = 300


def _report(result):
    return compute_report(result.trips, result.unfinished)


def _line(num: int, ok: bool, detail: str) -> str:
    text = f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(text, flush=True)
    return text


## ---- shared training fixtures ----------------------------------------------

def _train_population(scenario_name: str, reward: str):
    results = {}
    t0 = time.monotonic()
    for seed in SEEDS:
        results[seed] = train(builtin_scenario(scenario_name), reward,
                              EPISODES, seed)
    return results, time.monotonic() - t0


@pytest.fixture(scope="session")
def medium_avg():
    return _train_population("medium-train", "avg_speed")


@pytest.fixture(scope="session")
def medium_wait():
    return _train_population("medium-train", "diff_wait")


@pytest.fixture(scope="session")
def medium_pressure():
    return _train_population("medium-train", "pressure")


@pytest.fixture(scope="session")
def heavy_avg():
    return _train_population("heavy-train", "avg_speed")


def _evaluate(tables, scenario_name: str, seed: int, sensing=GROUND_TRUTH):
    scenario = builtin_scenario(scenario_name)
    res = run_agents(scenario, seed, tables, RunOptions(sensing=sensing))
    return _report(res)


## ---- criteria ---------------------------------------------------------------

def test_criterion_01_q_update_oracle():
    t0 = time.monotonic()
    params = AgentParams()
    table = QTable(2)
    mirror: dict[tuple, list[float]] = {}
    rng = random.Random(0xACCE55)
    state_pool = [
        (rng.randrange(2), rng.randrange(2)) + tuple(
            rng.randrange(21) for _ in range(8))
        for _ in range(60)
    ]
    for _ in range(1000):
        s = state_pool[rng.randrange(len(state_pool))]
        s2 = state_pool[rng.randrange(len(state_pool))]
        a = rng.randrange(2)
        r = rng.uniform(-30.0, 30.0)
        q_update(table, s, a, r, s2, params.alpha, params.gamma)
        row = mirror.setdefault(s, [0.0, 0.0])
        nxt = mirror.get(s2, [0.0, 0.0])
        row[a] = row[a] + params.alpha * (
            r + params.gamma * max(nxt) - row[a])
    mismatches = 0
    worst = 0.0
    for s, row in mirror.items():
        got = table.values(s)
        for a in range(2):
            if got[a] == row[a]:
                continue
            rel = abs(got[a] - row[a]) / max(abs(row[a]), 1e-300)
            worst = max(worst, rel)
            if rel > 1e-12:
                mismatches += 1
    wall = time.monotonic() - t0
    ok = mismatches == 0 and wall < 1.0
    msg = _line(1, ok, f"1000 updates vs independent reference, "
                       f"{mismatches} mismatches (worst rel {worst:.2e}), "
                       f"{wall:.2f}s < 1s")
    assert ok, msg


def test_criterion_02_volume_capacity():
    t0 = time.monotonic()
    ratio_med, los_med = v_over_c(700, 1800, 22, 50)
    ratio_heavy, los_heavy = v_over_c(1000, 1800, 22, 50)
    wall = time.monotonic() - t0
    ok = (abs(ratio_med - 0.88) <= 0.005 and los_med == "E"
          and abs(ratio_heavy - 1.26) <= 0.005 and los_heavy == "F"
          and wall < 1.0)
    msg = _line(2, ok, f"v/C(700)={ratio_med:.4f} LOS {los_med}, "
                       f"v/C(1000)={ratio_heavy:.4f} LOS {los_heavy}, "
                       f"{wall:.3f}s < 1s")
    assert ok, msg


def test_criterion_03_noise_calibration_replay():
    t0 = time.monotonic()
    targets = {"v5": (2.21, 3.48), "v8": (1.73, 2.80)}
    details = []
    ok = True
    for name, (mae_t, rmse_t) in targets.items():
        stats = synthetic_replay_stats(BUILTIN_PROFILES[name], lanes=43,
                                       snapshots=12000, seed=431)
        good = (abs(stats.mae - mae_t) <= 0.15
                and abs(stats.rmse - rmse_t) <= 0.25
                and stats.mean_error > 0.0)
        ok = ok and good
        details.append(f"{name}: mae {stats.mae:.3f} (target {mae_t}+-0.15), "
                       f"rmse {stats.rmse:.3f} (target {rmse_t}+-0.25), "
                       f"mean {stats.mean_error:+.3f}")
    wall = time.monotonic() - t0
    ok = ok and wall < 120.0
    msg = _line(3, ok, f"43 approaches x 12000 snapshots, "
                       f"{'; '.join(details)}; {wall:.0f}s < 120s")
    assert ok, msg


def test_criterion_04_learning_direction(medium_avg):
    results, wall = medium_avg
    passing = 0
    details = []
    for seed in SEEDS:
        speeds = [p.mean_system_speed for p in results[seed].curve]
        first = sum(speeds[:20]) / 20.0
        last = sum(speeds[-20:]) / 20.0
        ratio = last / first
        if last >= 1.15 * first:
            passing += 1
        details.append(f"s{seed} {ratio:.3f}")
    ok = passing >= 4 and wall < 1800.0
    msg = _line(4, ok, f"last-20/first-20 mean-speed ratios "
                       f"{', '.join(details)}; {passing}/5 seeds >= 1.15x; "
                       f"training wall {wall:.0f}s < 1800s")
    assert ok, msg


def test_criterion_05_agents_beat_baselines(medium_avg):
    results, _ = medium_avg
    walls = {}
    waits = {"agents": [], "static": [], "actuated": []}
    t0 = time.monotonic()
    for seed in SEEDS:
        waits["agents"].append(
            _evaluate(results[seed].tables, "medium-eval", seed).mean_waiting_time)
    walls["agents"] = time.monotonic() - t0
    scenario = builtin_scenario("medium-eval")
    t0 = time.monotonic()
    for seed in SEEDS:
        waits["static"].append(_report(run_static(scenario, seed)).mean_waiting_time)
    walls["static"] = time.monotonic() - t0
    t0 = time.monotonic()
    for seed in SEEDS:
        waits["actuated"].append(_report(run_actuated(scenario, seed)).mean_waiting_time)
    walls["actuated"] = time.monotonic() - t0
    mean = {k: sum(v) / len(v) for k, v in waits.items()}
    slowest = max(walls.values())
    ok = (mean["agents"] <= 0.5 * mean["static"]
          and mean["agents"] < mean["actuated"]
          and slowest < 600.0)
    msg = _line(5, ok, f"mean waiting: agents {mean['agents']:.1f}s, "
                       f"static {mean['static']:.1f}s (need <= "
                       f"{0.5 * mean['static']:.1f}), actuated "
                       f"{mean['actuated']:.1f}s; slowest cell "
                       f"{slowest:.0f}s < 600s")
    assert ok, msg


def test_criterion_06_noise_robustness_ordering(medium_avg, medium_wait,
                                                medium_pressure):
    populations = {
        "avg_speed": medium_avg[0],
        "diff_wait": medium_wait[0],
        "pressure": medium_pressure[0],
    }
    v5 = BUILTIN_PROFILES["v5"]
    degradation = {name: [] for name in populations}
    for name, results in populations.items():
        for seed in SEEDS:
            gt = _evaluate(results[seed].tables, "medium-eval", seed)
            noisy = _evaluate(results[seed].tables, "medium-eval", seed,
                              sensing=v5)
            degradation[name].append(
                100.0 * (noisy.mean_trip_duration - gt.mean_trip_duration)
                / gt.mean_trip_duration)
    avg_mean = sum(degradation["avg_speed"]) / len(SEEDS)
    worse = sum(
        1 for i in range(len(SEEDS))
        if degradation["diff_wait"][i] > degradation["avg_speed"][i]
        and degradation["pressure"][i] > degradation["avg_speed"][i])
    ok = avg_mean <= 15.0 and worse >= 4
    per_seed = "; ".join(
        f"s{seed} avg {degradation['avg_speed'][i]:+.1f}% "
        f"wait {degradation['diff_wait'][i]:+.1f}% "
        f"press {degradation['pressure'][i]:+.1f}%"
        for i, seed in enumerate(SEEDS))
    msg = _line(6, ok, f"v5 trip-duration degradation: avg_speed mean "
                       f"{avg_mean:+.1f}% (need <= +15%); both others worse "
                       f"in {worse}/5 seeds (need >= 4). {per_seed}")
    assert ok, msg


def test_criterion_07_detector_quality_ordering(heavy_avg):
    results, _ = heavy_avg
    v5 = BUILTIN_PROFILES["v5"]
    v8 = BUILTIN_PROFILES["v8"]
    ordered = 0
    details = []
    for seed in SEEDS:
        tables = results[seed].tables
        w_gt = _evaluate(tables, "heavy-eval", seed).mean_waiting_time
        w_v8 = _evaluate(tables, "heavy-eval", seed, sensing=v8).mean_waiting_time
        w_v5 = _evaluate(tables, "heavy-eval", seed, sensing=v5).mean_waiting_time
        if w_gt < w_v8 < w_v5:
            ordered += 1
        details.append(f"s{seed} gt {w_gt:.1f} v8 {w_v8:.1f} v5 {w_v5:.1f}")
    ok = ordered >= 4
    msg = _line(7, ok, f"waiting ordered gt < v8 < v5 in {ordered}/5 seeds "
                       f"(need >= 4). {'; '.join(details)}")
    assert ok, msg


def test_criterion_08_spillback_blindness():
    tr = train(builtin_scenario("spillback"), "queue", 40, 0)
    res = run_agents(builtin_scenario("spillback"), 0, tr.tables,
                     RunOptions(collect_observations=True))
    feeder = "X_W_0->J_0_0"
    rows = [r for r in res.observations if r[2] == feeder]
    assert rows, "no observations logged for the feeder approach"
    stopped_at = {t: stopped for t, stopped, _ in res.network_samples}
    qmax = max(r[4] for r in rows)
    ## hunt for a stretch where the observed queue sits pegged at its
    ## ceiling while the ground-truth network queue keeps growing
    best = None
    i = 0
    while i < len(rows):
        if rows[i][4] != qmax:
            i += 1
            continue
        j = i
        while j + 1 < len(rows) and rows[j + 1][4] == qmax:
            j += 1
        length = j - i + 1
        growth = stopped_at[rows[j][0]] - stopped_at[rows[i][0]]
        if best is None or (length, growth) > best[:2]:
            best = (length, growth, rows[i][0], rows[j][0])
        i = j + 1
    length, growth, t_a, t_b = best
    ok = length >= 8 and growth >= 3 and qmax >= 5
    msg = _line(8, ok, f"observed queue pegged at {qmax} for {length} "
                       f"consecutive rounds ({t_a:.0f}s..{t_b:.0f}s) while "
                       f"network queue grew by {growth} vehicles")
    assert ok, msg


def test_criterion_09_watchdog_and_stale_fallback():
    t0 = time.monotonic()
    scenario = builtin_scenario("single")
    tr = train(builtin_scenario("single"), "avg_speed", 30, 3)
    inter_id = next(iter(tr.tables.tables))
    cap = tr.tables.params.count_cap
    seed = 11

    def replay(tables):
        """Greedy deployment like run_agents, recording per-round states."""
        session = CaptureSession(GROUND_TRUTH, seed)
        visits = []

        def boundary(now, loop):
            per = _capture_round(loop, session, now)
            for inter in loop.intersections:
                ctrl = loop.ctrls[inter.id]
                state = encode_state(ctrl.current_phase, min_green_flag(ctrl),
                                     per[inter.id], inter.incoming_lanes, cap)
                visits.append((now, state))
                action = act_deployment(tables.tables[inter.id], state)
                if action is not None:
                    loop.request(inter, action, now)

        res = _run_loop(scenario, seed, RunOptions(collect_signal_trace=True),
                        boundary=boundary)
        return res, visits

    _, visits = replay(tr.tables)
    table = tr.tables.tables[inter_id]
    target = next((now, state) for now, state in visits
                  if now >= 20.0 and state in table)
    t_star, s_star = target

    emptied = copy.deepcopy(tr.tables)
    del emptied.tables[inter_id].q[s_star]
    emptied.tables[inter_id].visits.pop(s_star, None)
    res2, visits2 = replay(emptied)
    t_hit = next(now for now, state in visits2 if state == s_star)
    yellow = scenario.network.intersections[inter_id].yellow_duration
    deadline = t_hit + 60.0 + yellow + 0.25
    green_changes = [t for t, iid, phase, in_yellow, _ in res2.signal_trace
                     if iid == inter_id and not in_yellow and t > t_hit]
    changed_at = min((t for t in green_changes if t <= deadline),
                     default=None)
    part_a = changed_at is not None

    profile = NoiseProfile(name="drop_all", drop_rate=1.0)
    res3 = run_agents(scenario, seed, tr.tables,
                      RunOptions(sensing=profile, collect_observations=True))
    seen = set()
    stale_ok = True
    for _, _, lane, _, _, stale in res3.observations:
        if lane in seen and not stale:
            stale_ok = False
            break
        seen.add(lane)
    part_b = stale_ok and not res3.truncated and res3.trips
    wall = time.monotonic() - t0
    ok = part_a and bool(part_b) and wall < 120.0
    msg = _line(9, ok, f"unseen state entered at {t_hit:.0f}s, phase changed "
                       f"at {changed_at if changed_at else 'never'}s "
                       f"(deadline {deadline:.1f}s); drop_rate=1 run: "
                       f"stale-after-first={stale_ok}, completed="
                       f"{not res3.truncated}, {len(res3.trips)} trips; "
                       f"{wall:.0f}s < 120s")
    assert ok, msg


def test_criterion_10_determinism(tmp_path_factory):
    base = tmp_path_factory.mktemp("determinism")

    def read_all(directory):
        out = {}
        for path in sorted(directory.iterdir()):
            out[path.name] = path.read_bytes()
        return out

    mismatch = []
    train_a = base / "train_a"
    train_b = base / "train_b"
    for out_dir in (train_a, train_b):
        cmd_train(ExperimentSpec(scenario="single", reward="avg_speed",
                                 episodes=3, seeds=(0,), out_dir=str(out_dir)))
    if read_all(train_a) != read_all(train_b):
        mismatch.append("train")

    eval_a = base / "eval_a"
    eval_b = base / "eval_b"
    for out_dir in (eval_a, eval_b):
        cmd_evaluate(ExperimentSpec(scenario="single", controller="static",
                                    seeds=(0, 1), out_dir=str(out_dir)))
    if read_all(eval_a) != read_all(eval_b):
        mismatch.append("evaluate")

    ## a repeat into the same directory must overwrite with identical bytes
    before = read_all(eval_a)
    cmd_evaluate(ExperimentSpec(scenario="single", controller="static",
                                seeds=(0, 1), out_dir=str(eval_a)))
    if read_all(eval_a) != before:
        mismatch.append("rerun-in-place")

    ok = not mismatch
    names = sorted(read_all(eval_a))
    msg = _line(10, ok, f"byte-identical artifacts across reruns "
                        f"({', '.join(names)})"
                        + (f"; mismatches: {mismatch}" if mismatch else ""))
    assert ok, msg
