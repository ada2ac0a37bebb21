import pytest

from trafficlab.microsim import SimState
from trafficlab.network import DemandFlow, ScenarioConfig, grid_generator
from trafficlab.rewards import (REWARDS, RewardContext, build_context,
                                get_reward)


def ctx(**kwargs):
    base = dict(
        intersection_id="J",
        incoming_lanes=("a", "b"),
        outgoing_lanes=("c", "d"),
        waiting_sum=0.0,
        prev_waiting_sum=None,
        stopped_in=(0, 0),
        count_in=0,
        count_out=0,
        speeds=[],
    )
    base.update(kwargs)
    return RewardContext(**base)


class TestRewardFunctions:
    def test_queue_is_negative_total_stopped(self):
        assert REWARDS["queue"](ctx(stopped_in=(3, 4))) == -7.0
        assert REWARDS["queue"](ctx(stopped_in=(0, 0))) == 0.0

    def test_diff_wait_sign_rewards_decreasing_wait(self):
        assert REWARDS["diff_wait"](ctx(waiting_sum=30.0,
                                        prev_waiting_sum=50.0)) == 20.0
        assert REWARDS["diff_wait"](ctx(waiting_sum=50.0,
                                        prev_waiting_sum=30.0)) == -20.0

    def test_diff_wait_first_call_is_zero(self):
        assert REWARDS["diff_wait"](ctx(waiting_sum=99.0,
                                        prev_waiting_sum=None)) == 0.0

    def test_avg_speed_normalized_by_limit(self):
        speeds = [(13.89, 13.89), (0.0, 13.89)]
        assert REWARDS["avg_speed"](ctx(speeds=speeds)) == pytest.approx(0.5)
        mixed = [(5.0, 10.0), (10.0, 20.0), (0.0, 10.0)]
        assert REWARDS["avg_speed"](ctx(speeds=mixed)) == pytest.approx(1 / 3)

    def test_avg_speed_empty_vicinity_is_free_flow(self):
        assert REWARDS["avg_speed"](ctx(speeds=[])) == 1.0

    def test_pressure_is_out_minus_in(self):
        assert REWARDS["pressure"](ctx(count_in=3, count_out=5)) == 2.0
        assert REWARDS["pressure"](ctx(count_in=7, count_out=2)) == -5.0

    def test_registry_lookup(self):
        assert get_reward("queue") is REWARDS["queue"]
        with pytest.raises(ValueError, match="avg_speed.*diff_wait|diff_wait"):
            get_reward("bogus")


class TestBuildContext:
    def make_sim(self):
        net = grid_generator(1, 1, 100.0, 100.0)
        config = ScenarioConfig(
            network=net,
            flows=[
                DemandFlow("X_W_0", "X_E_0", 1200.0, 0.0, 60.0),
                DemandFlow("X_N_0", "X_S_0", 600.0, 0.0, 60.0),
            ],
            max_sim_time=600.0,
        )
        return SimState(config, seed=7), net.intersections["J_0_0"]

    def test_context_matches_direct_queries(self):
        sim, inter = self.make_sim()
        ## hold everything red so queues and waiting build up
        red = {lid: 2 for lid in inter.incoming_lanes}
        for _ in range(1200):
            sim.step(red)
        c = build_context(sim, inter, prev_waiting_sum=None)
        assert c.count_in == sum(sim.lane_count(l) for l in inter.incoming_lanes)
        assert c.count_in > 0
        assert c.stopped_in == tuple(
            sim.lane_stopped_count(l) for l in inter.incoming_lanes)
        assert c.waiting_sum == pytest.approx(
            sum(sim.lane_waiting_sum(l) for l in inter.incoming_lanes))
        assert len(c.speeds) == c.count_in + c.count_out

    def test_diff_wait_telescopes_across_boundaries(self):
        sim, inter = self.make_sim()
        red = {lid: 2 for lid in inter.incoming_lanes}
        fn = REWARDS["diff_wait"]
        prev = None
        total = 0.0
        waits = []
        for _ in range(5):
            for _ in range(100):
                sim.step(red)
            c = build_context(sim, inter, prev)
            total += fn(c)
            prev = c.waiting_sum
            waits.append(c.waiting_sum)
        ## the sum of differences telescopes to first minus last
        assert total == pytest.approx(waits[0] - waits[-1])
        assert waits[-1] > waits[0]

    def test_brute_force_cross_check_all_rewards(self):
        sim, inter = self.make_sim()
        red = {lid: 2 for lid in inter.incoming_lanes}
        for _ in range(900):
            sim.step(red)
        c = build_context(sim, inter, prev_waiting_sum=10.0)

        by_lane = {}
        for lane_id, veh in sim.iter_vehicles():
            by_lane.setdefault(lane_id, []).append(veh)
        vicinity = [v for lid in inter.incoming_lanes + inter.outgoing_lanes
                    for v in by_lane.get(lid, [])]
        n_in = sum(len(by_lane.get(l, [])) for l in inter.incoming_lanes)
        n_out = sum(len(by_lane.get(l, [])) for l in inter.outgoing_lanes)
        stopped = sum(1 for l in inter.incoming_lanes
                      for v in by_lane.get(l, []) if v.speed < 0.1)
        waiting = sum(v.waiting_time(sim.clock)
                      for l in inter.incoming_lanes
                      for v in by_lane.get(l, []))
        mean_norm = (sum(v.speed / 13.89 for v in vicinity) / len(vicinity)
                     if vicinity else 1.0)

        assert REWARDS["queue"](c) == pytest.approx(-stopped)
        assert REWARDS["pressure"](c) == pytest.approx(n_out - n_in)
        assert REWARDS["avg_speed"](c) == pytest.approx(mean_norm)
        assert REWARDS["diff_wait"](c) == pytest.approx(10.0 - waiting)
