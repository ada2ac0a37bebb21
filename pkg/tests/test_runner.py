import statistics

import pytest

from trafficlab.agents import AgentParams, QTable, TableSet, tables_to_text
from trafficlab.network import network_hash
from trafficlab.perception import NoiseProfile, error_stats
from trafficlab.runner import (RunOptions, run_actuated, run_agents,
                               run_static, train)
from trafficlab.scenarios import single_intersection


def quick_single(**kwargs):
    ## short demand window keeps these runs around a simulated minute or two
    kwargs.setdefault("ew_rate", 400.0)
    kwargs.setdefault("ns_rate", 120.0)
    kwargs.setdefault("window", (0.0, 60.0))
    return single_intersection(**kwargs)


def trip_signature(result):
    return [(t.vehicle_id, t.depart_time, t.arrive_time, t.waiting, t.distance)
            for t in result.trips]


def empty_tables(scenario):
    inters = scenario.network.intersections
    return TableSet(
        tables={iid: QTable(len(inter.phases))
                for iid, inter in inters.items()},
        lane_orders={iid: tuple(inter.incoming_lanes)
                     for iid, inter in inters.items()},
        reward="avg_speed",
        network_hash=network_hash(scenario.network),
        params=AgentParams(decay_episodes=1),
    )


class TestBaselines:
    def test_static_is_deterministic(self):
        sc = quick_single()
        a = run_static(sc, seed=11)
        b = run_static(sc, seed=11)
        assert trip_signature(a) == trip_signature(b)
        assert a.mean_system_speed == b.mean_system_speed
        assert a.intersection_waits == b.intersection_waits

    def test_static_seeds_differ(self):
        sc = quick_single()
        a = run_static(sc, seed=1)
        b = run_static(sc, seed=2)
        assert trip_signature(a) != trip_signature(b)

    def test_static_trace_follows_the_fixed_plan(self):
        """22 s green, 3 s yellow, alternating phases on a 50 s cycle."""
        sc = quick_single()
        result = run_static(sc, seed=3,
                            options=RunOptions(collect_signal_trace=True))
        trace = [row for row in result.signal_trace if row[1] == "J_0_0"]
        assert trace[0] == (0.0, "J_0_0", 0, 0, 0)
        times = [row[0] for row in trace[1:9]]
        expected = [22.0, 25.0, 47.0, 50.0, 72.0, 75.0, 97.0, 100.0]
        for got, want in zip(times, expected):
            assert got == pytest.approx(want, abs=0.11)
        phases = [(row[2], row[3]) for row in trace[1:5]]
        assert phases == [(0, 1), (1, 0), (1, 1), (0, 0)]
        assert all(row[4] == 0 for row in trace), "static never trips the watchdog"

    def test_actuated_completes_and_differs_from_static(self):
        sc = quick_single()
        st = run_static(sc, seed=6)
        ac = run_actuated(sc, seed=6)
        assert not ac.truncated
        assert len(ac.trips) == len(st.trips)   # same demand either way
        assert trip_signature(ac) != trip_signature(st)


class TestAgentDeployment:
    def test_empty_tables_rely_on_watchdog(self):
        """Unseen states yield no requests, so only the 60 s watchdog plus
        yellow moves the lights; the run must still complete."""
        sc = quick_single()
        result = run_agents(sc, seed=4, tables=empty_tables(sc),
                            options=RunOptions(collect_signal_trace=True))
        assert not result.truncated
        assert result.forced_changes >= 1
        forced_times = [row[0] for row in result.signal_trace if row[4]]
        assert forced_times, "watchdog should have fired"
        ## first force comes one max_stuck (60 s) after the start
        assert forced_times[0] == pytest.approx(60.0, abs=0.2)
        settles = [row for row in result.signal_trace
                   if row[1] == "J_0_0" and not row[3] and row[0] > 0.0]
        assert settles and settles[0][2] == 1   # landed on the other phase

    def test_network_hash_mismatch_rejected(self):
        sc = quick_single()
        tables = empty_tables(sc)
        other = tables.__class__(
            tables=tables.tables, lane_orders=tables.lane_orders,
            reward=tables.reward, network_hash="0" * 64, params=tables.params)
        with pytest.raises(ValueError, match="trained on network"):
            run_agents(sc, seed=1, tables=other)

    def test_lane_order_mismatch_rejected(self):
        sc = quick_single()
        tables = empty_tables(sc)
        tables.lane_orders["J_0_0"] = tuple(reversed(tables.lane_orders["J_0_0"]))
        with pytest.raises(ValueError, match="lane order mismatch"):
            run_agents(sc, seed=1, tables=tables)

    def test_error_streams_align_under_noise(self):
        sc = quick_single()
        profile = NoiseProfile("n", over_count_rate=0.1, under_count_rate=0.05)
        opts = RunOptions(sensing=profile, collect_error_streams=True)
        result = run_agents(sc, seed=9, tables=empty_tables(sc), options=opts)
        assert result.noisy_stream and result.truth_stream
        stats = error_stats(result.noisy_stream, result.truth_stream)
        assert stats.n_snapshots == result.decision_rounds
        assert stats.rmse >= stats.mae

    def test_observation_log_covers_every_lane_each_round(self):
        sc = quick_single()
        opts = RunOptions(collect_observations=True)
        result = run_agents(sc, seed=9, tables=empty_tables(sc), options=opts)
        lanes_per_round = len(sc.network.intersections["J_0_0"].incoming_lanes)
        assert len(result.observations) == result.decision_rounds * lanes_per_round
        now0 = result.observations[0][0]
        assert now0 == 0.0
        for row in result.observations:
            t, iid, lane_id, occ, queue, stale = row
            assert iid == "J_0_0"
            assert 0 <= queue <= occ
            assert stale == 0


class TestTraining:
    def test_two_episode_run_is_reproducible(self):
        sc = quick_single()
        r1 = train(sc, "avg_speed", episodes=2, seed=5)
        r2 = train(sc, "avg_speed", episodes=2, seed=5)
        assert tables_to_text(r1.tables) == tables_to_text(r2.tables)
        assert [p.mean_system_speed for p in r1.curve] == \
               [p.mean_system_speed for p in r2.curve]
        assert r1.total_rounds == r2.total_rounds > 0

    def test_curve_and_params_bookkeeping(self):
        sc = quick_single()
        points = []
        result = train(sc, "queue", episodes=3, seed=2, progress=points.append)
        assert [p.episode for p in result.curve] == [0, 1, 2]
        assert points == result.curve
        assert result.tables.reward == "queue"
        assert result.tables.params.decay_episodes == 3
        assert result.tables.episodes_trained == 3
        eps = [p.epsilon for p in result.curve]
        assert eps[0] > eps[-1] >= 0.005
        assert result.tables.network_hash == network_hash(sc.network)

    def test_tables_grow_and_visits_accumulate(self):
        sc = quick_single()
        result = train(sc, "avg_speed", episodes=2, seed=7)
        table = result.tables.tables["J_0_0"]
        assert len(table.q) > 5
        assert sum(table.visits.values()) > 0

    def test_learning_direction_on_one_intersection(self):
        """100 episodes of asymmetric single-intersection traffic: waiting
        over the final 10 episodes drops below the first 10."""
        sc = single_intersection(ew_rate=500.0, ns_rate=150.0,
                                 window=(0.0, 120.0))
        result = train(sc, "avg_speed", episodes=100, seed=0)
        waits = [statistics.fmean(p.mean_wait.values()) for p in result.curve]
        first = statistics.fmean(waits[:10])
        last = statistics.fmean(waits[-10:])
        assert last < first
